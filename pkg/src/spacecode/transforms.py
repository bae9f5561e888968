"""Semantic-preserving program transformations.

Renaming, dead-code insertion and identity rewriting all preserve the
structural label oracle by construction; renaming additionally works on
text-backed programs (lexical splice) so externally loaded code can be
attacked too. Dead code and identity rewrites need an AST.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .lexer import MINILANG, LanguageProfile, lex
from .minilang import (Assign, BinOp, Call, CallStmt, Decl, For, Func, If,
                       LabeledSample, Lit, Program, Ret, Var, collect_names, render)
from .seeding import derive_rng

log = logging.getLogger(__name__)

TRANSFORM_IDS = ("rename", "dead_code", "identity_rewrite")


class TransformError(ValueError):
    pass


@dataclass(frozen=True)
class TransformSpec:
    id: str
    seed: int = 0
    intensity: float = 1.0

    def __post_init__(self):
        if self.id not in TRANSFORM_IDS:
            raise TransformError(f"unknown transformation {self.id!r}")

    def to_dict(self) -> dict:
        return {"id": self.id, "seed": self.seed, "intensity": self.intensity}

    @classmethod
    def from_dict(cls, d: dict) -> "TransformSpec":
        return cls(id=d["id"], seed=int(d.get("seed", 0)),
                   intensity=float(d.get("intensity", 1.0)))


# ---------------------------------------------------------------------------
# renaming
# ---------------------------------------------------------------------------

def validate_rename_map(program: Program, mapping: dict,
                        profile: LanguageProfile = MINILANG):
    """Enforce the substitution rules: valid fresh identifiers only."""
    untouched = program.identifiers - set(mapping)
    seen = set()
    for original, substitute in mapping.items():
        if original not in program.identifiers:
            raise TransformError(f"{original!r} is not an identifier of this program")
        if not profile.is_identifier(substitute) or substitute in profile.builtins:
            raise TransformError(f"substitute {substitute!r} is not a legal identifier")
        if substitute in untouched:
            raise TransformError(f"substitute {substitute!r} collides with an existing name")
        if substitute in seen:
            raise TransformError(f"substitute {substitute!r} used twice")
        seen.add(substitute)


def _rename_expr(e, mapping):
    if isinstance(e, Var):
        return Var(mapping.get(e.name, e.name))
    if isinstance(e, BinOp):
        return BinOp(e.op, _rename_expr(e.left, mapping), _rename_expr(e.right, mapping))
    if isinstance(e, Call):
        return Call(e.func, tuple(_rename_expr(a, mapping) for a in e.args))
    return e


def _rename_stmt(s, mapping):
    if isinstance(s, Decl):
        return Decl(mapping.get(s.name, s.name), _rename_expr(s.expr, mapping))
    if isinstance(s, Assign):
        return Assign(mapping.get(s.name, s.name), _rename_expr(s.expr, mapping))
    if isinstance(s, If):
        return If(_rename_expr(s.cond, mapping),
                  tuple(_rename_stmt(x, mapping) for x in s.body))
    if isinstance(s, For):
        return For(mapping.get(s.var, s.var), _rename_expr(s.start, mapping),
                   _rename_expr(s.cond, mapping),
                   tuple(_rename_stmt(x, mapping) for x in s.body))
    if isinstance(s, CallStmt):
        return CallStmt(_rename_expr(s.call, mapping))
    if isinstance(s, Ret):
        return Ret(_rename_expr(s.expr, mapping))
    raise TypeError(f"not a statement: {s!r}")


def rename_identifiers(program: Program, mapping: dict,
                       profile: LanguageProfile = MINILANG) -> Program:
    """Apply a rename map to every occurrence outside strings and comments."""
    validate_rename_map(program, mapping, profile)
    if not mapping:
        return program
    if program.func is not None:
        func = Func(mapping.get(program.func.name, program.func.name),
                    tuple(mapping.get(p, p) for p in program.func.params),
                    tuple(_rename_stmt(s, mapping) for s in program.func.body))
        return Program.from_func(func)
    # text-backed: splice identifier tokens in place
    pieces = []
    for tok in lex(program.source, profile):
        if tok.kind == "identifier" and tok.text in mapping:
            pieces.append(mapping[tok.text])
        else:
            pieces.append(tok.text)
    renamed = "".join(pieces)
    names = (program.identifiers - set(mapping)) | set(mapping.values())
    return Program(func=None, source=renamed, identifiers=frozenset(names))


# ---------------------------------------------------------------------------
# dead code
# ---------------------------------------------------------------------------

def _fresh_names(existing, count: int, stem: str = "unused") -> list:
    out = []
    i = 0
    while len(out) < count:
        name = f"{stem}_{i}"
        if name not in existing and name not in out:
            out.append(name)
        i += 1
    return out


def insert_dead_code(program: Program, rng: np.random.Generator) -> Program:
    """Insert 1-3 no-effect statements at random top-level positions."""
    if program.func is None:
        raise TransformError("dead-code insertion needs an AST-backed program")
    body = list(program.func.body)
    count = int(rng.integers(1, 4))
    names = _fresh_names(program.identifiers, count)
    for name in names:
        if rng.random() < 0.5:
            stmt = Decl(name, Lit(int(rng.integers(0, 4))))
        else:
            stmt = If(Lit(0), (Decl(name, Lit(1)),))
        body.insert(int(rng.integers(0, len(body) + 1)), stmt)
    func = Func(program.func.name, program.func.params, tuple(body))
    return Program.from_func(func)


# ---------------------------------------------------------------------------
# identity rewriting
# ---------------------------------------------------------------------------

def _wrap_some(e, rng, rate: float, counter: list):
    """Recursively wrap arithmetic subexpressions as (e + 0)."""
    if isinstance(e, BinOp):
        e = BinOp(e.op, _wrap_some(e.left, rng, rate, counter),
                  _wrap_some(e.right, rng, rate, counter))
    elif isinstance(e, Call):
        e = Call(e.func, tuple(_wrap_some(a, rng, rate, counter) for a in e.args))
    if isinstance(e, (Var, Lit, BinOp)) and rng.random() < rate:
        counter[0] += 1
        return BinOp("+", e, Lit(0))
    return e


def rewrite_identities(program: Program, rng: np.random.Generator,
                       intensity: float = 0.5) -> Program:
    """Rewrite expressions through value-preserving identities.

    Arithmetic expressions gain `+ 0` wrappers, conditions gain `&& true`;
    at least one rewrite is always applied.
    """
    if program.func is None:
        raise TransformError("identity rewriting needs an AST-backed program")
    rate = min(max(intensity, 0.0), 1.0) * 0.4
    applied = [0]

    def wrap_cond(c):
        if rng.random() < rate * 1.5:
            applied[0] += 1
            return BinOp("&&", c, Lit(True))
        return c

    def rw_stmt(s):
        if isinstance(s, Decl):
            return Decl(s.name, _wrap_some(s.expr, rng, rate, applied))
        if isinstance(s, Assign):
            return Assign(s.name, _wrap_some(s.expr, rng, rate, applied))
        if isinstance(s, If):
            return If(wrap_cond(s.cond), tuple(rw_stmt(x) for x in s.body))
        if isinstance(s, For):
            return For(s.var, s.start, wrap_cond(s.cond),
                       tuple(rw_stmt(x) for x in s.body))
        if isinstance(s, CallStmt):
            return CallStmt(_wrap_some(s.call, rng, rate, applied))
        if isinstance(s, Ret):
            return Ret(_wrap_some(s.expr, rng, rate, applied))
        return s

    body = tuple(rw_stmt(s) for s in program.func.body)
    if applied[0] == 0 and body:
        first = body[0]
        body = (rw_stmt_force(first),) + body[1:]
    func = Func(program.func.name, program.func.params, body)
    return Program.from_func(func)


def rw_stmt_force(s):
    """Deterministic fallback: wrap the statement's main expression in + 0."""
    if isinstance(s, Decl):
        return Decl(s.name, BinOp("+", s.expr, Lit(0)))
    if isinstance(s, Assign):
        return Assign(s.name, BinOp("+", s.expr, Lit(0)))
    if isinstance(s, If):
        return If(BinOp("&&", s.cond, Lit(True)), s.body)
    if isinstance(s, For):
        return For(s.var, s.start, BinOp("&&", s.cond, Lit(True)), s.body)
    if isinstance(s, Ret):
        return Ret(BinOp("+", s.expr, Lit(0)))
    if isinstance(s, CallStmt) and s.call.args:
        return CallStmt(Call(s.call.func,
                             (BinOp("+", s.call.args[0], Lit(0)),) + s.call.args[1:]))
    return s


# ---------------------------------------------------------------------------
# composition
# ---------------------------------------------------------------------------

def _random_rename(program: Program, rng: np.random.Generator,
                   intensity: float, profile: LanguageProfile) -> Program:
    """Rename a fraction of the identifiers to positional arg_i names."""
    names = sorted(program.identifiers)
    if not names:
        return program
    count = max(1, int(round(len(names) * min(max(intensity, 0.0), 1.0))))
    chosen = [names[i] for i in rng.choice(len(names), size=count, replace=False)]
    substitutes = []
    i = 0
    while len(substitutes) < count:
        candidate = f"arg_{i}"
        if candidate not in program.identifiers:
            substitutes.append(candidate)
        i += 1
    return rename_identifiers(program, dict(zip(chosen, substitutes)), profile)


def apply_spec(program: Program, spec: TransformSpec, rng: np.random.Generator,
               profile: LanguageProfile = MINILANG) -> Program:
    if spec.id == "rename":
        return _random_rename(program, rng, spec.intensity, profile)
    if spec.id == "dead_code":
        return insert_dead_code(program, rng)
    return rewrite_identities(program, rng, spec.intensity)


DEFAULT_ADV_SPECS = (TransformSpec("rename", seed=1),
                     TransformSpec("dead_code", seed=2),
                     TransformSpec("identity_rewrite", seed=3, intensity=0.6))


def build_adv_testset(testset: list, specs, seed: int = 0,
                      profile: LanguageProfile = MINILANG) -> list:
    """Apply the composition of `specs` to every sample; labels carry over."""
    if not testset:
        raise TransformError("build_adv_testset: testset is empty")
    out = []
    for index, sample in enumerate(testset):
        program = sample.program
        for spec in specs:
            rng = derive_rng(seed, "transform", spec.id, spec.seed, index)
            program = apply_spec(program, spec, rng, profile)
        out.append(LabeledSample(program, sample.label, sample.defect_kind,
                                 sample.sample_id))
    return out


def expand_for_augmentation(samples: list, k: int, seed: int,
                            profile: LanguageProfile = MINILANG) -> list:
    """K transformation variants per sample (slot 0 = original).

    A sample whose transformation fails (e.g. no AST) falls back to the
    original program for that slot; the fallback is logged.
    """
    out = []
    for index, sample in enumerate(samples):
        variants = [sample]
        for j in range(1, k):
            rng = derive_rng(seed, "augment", index, j)
            try:
                program = sample.program
                for spec in DEFAULT_ADV_SPECS:
                    program = apply_spec(program, spec, rng, profile)
                variants.append(LabeledSample(program, sample.label,
                                              sample.defect_kind, sample.sample_id))
            except TransformError as exc:
                log.warning("augmentation fell back to the original for sample %s: %s",
                            sample.sample_id, exc)
                variants.append(sample)
        out.append(variants)
    return out
