"""MiniLang: a tiny C-like language with a structural defect oracle.

Programs are labelled by construction. The oracle reads only code structure
(zero-guards around divisions, loop-bound comparison operators, the order of
release/use calls), never identifier names, so renaming provably cannot flip
a label. That makes "semantic-preserving" a checkable invariant instead of
an assumption.

Defect patterns:
  div_no_guard       a / b on a variable divisor outside any `if (b != 0)` block
  loop_bound         a for-loop whose condition compares with `<=`
  use_after_release  any read of a variable after `release(var)`
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .lexer import MINILANG, LanguageProfile, content_tokens, identifier_names, lex

DEFECT_KINDS = ("div_no_guard", "loop_bound", "use_after_release")


# ---------------------------------------------------------------------------
# AST
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Lit:
    value: object  # int or bool


@dataclass(frozen=True)
class BinOp:
    op: str
    left: object
    right: object


@dataclass(frozen=True)
class Call:
    func: str
    args: tuple


@dataclass(frozen=True)
class Decl:
    name: str
    expr: object


@dataclass(frozen=True)
class Assign:
    name: str
    expr: object


@dataclass(frozen=True)
class If:
    cond: object
    body: tuple


@dataclass(frozen=True)
class For:
    var: str
    start: object
    cond: object
    body: tuple


@dataclass(frozen=True)
class CallStmt:
    call: Call


@dataclass(frozen=True)
class Ret:
    expr: object


@dataclass(frozen=True)
class Func:
    name: str
    params: tuple
    body: tuple


@dataclass(frozen=True)
class Program:
    func: object  # Func or None for opaque (non-MiniLang) sources
    source: str
    identifiers: frozenset

    @classmethod
    def from_func(cls, func: Func) -> "Program":
        return cls(func=func, source=render(func),
                   identifiers=frozenset(collect_names(func)))

    @classmethod
    def from_source(cls, source: str, profile: LanguageProfile = MINILANG) -> "Program":
        """Wrap raw source; recovers the AST when the text parses as MiniLang."""
        try:
            func = parse(source)
        except (MiniLangSyntaxError, Exception):
            func = None
        names = identifier_names(lex(source, profile), profile)
        return cls(func=func, source=source, identifiers=frozenset(names))


@dataclass(frozen=True)
class LabeledSample:
    program: Program
    label: int
    defect_kind: object = None  # str or None
    sample_id: object = 0


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------

def render_expr(e) -> str:
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Lit):
        if isinstance(e.value, bool):
            return "true" if e.value else "false"
        return str(e.value)
    if isinstance(e, Call):
        return f"{e.func}({', '.join(render_expr(a) for a in e.args)})"
    if isinstance(e, BinOp):
        left = render_expr(e.left)
        right = render_expr(e.right)
        if isinstance(e.left, BinOp):
            left = f"({left})"
        if isinstance(e.right, BinOp):
            right = f"({right})"
        return f"{left} {e.op} {right}"
    raise TypeError(f"not an expression: {e!r}")


def _render_stmt(s, depth: int, lines: list):
    pad = "    " * depth
    if isinstance(s, Decl):
        lines.append(f"{pad}int {s.name} = {render_expr(s.expr)};")
    elif isinstance(s, Assign):
        lines.append(f"{pad}{s.name} = {render_expr(s.expr)};")
    elif isinstance(s, If):
        lines.append(f"{pad}if ({render_expr(s.cond)}) {{")
        for inner in s.body:
            _render_stmt(inner, depth + 1, lines)
        lines.append(f"{pad}}}")
    elif isinstance(s, For):
        head = f"{s.var} = {render_expr(s.start)}; {render_expr(s.cond)}; {s.var} = {s.var} + 1"
        lines.append(f"{pad}for ({head}) {{")
        for inner in s.body:
            _render_stmt(inner, depth + 1, lines)
        lines.append(f"{pad}}}")
    elif isinstance(s, CallStmt):
        lines.append(f"{pad}{render_expr(s.call)};")
    elif isinstance(s, Ret):
        lines.append(f"{pad}return {render_expr(s.expr)};")
    else:
        raise TypeError(f"not a statement: {s!r}")


def render(func: Func) -> str:
    params = ", ".join(f"int {p}" for p in func.params)
    lines = [f"int {func.name}({params}) {{"]
    for s in func.body:
        _render_stmt(s, 1, lines)
    lines.append("}")
    return "\n".join(lines)


def collect_names(func: Func) -> set:
    """Every renameable identifier in the tree (builtin callees excluded)."""
    names = {func.name}
    names.update(func.params)

    def walk_expr(e):
        if isinstance(e, Var):
            names.add(e.name)
        elif isinstance(e, BinOp):
            walk_expr(e.left)
            walk_expr(e.right)
        elif isinstance(e, Call):
            for a in e.args:
                walk_expr(a)

    def walk_stmt(s):
        if isinstance(s, Decl):
            names.add(s.name)
            walk_expr(s.expr)
        elif isinstance(s, Assign):
            names.add(s.name)
            walk_expr(s.expr)
        elif isinstance(s, If):
            walk_expr(s.cond)
            for inner in s.body:
                walk_stmt(inner)
        elif isinstance(s, For):
            names.add(s.var)
            walk_expr(s.start)
            walk_expr(s.cond)
            for inner in s.body:
                walk_stmt(inner)
        elif isinstance(s, CallStmt):
            walk_expr(s.call)
        elif isinstance(s, Ret):
            walk_expr(s.expr)

    for s in func.body:
        walk_stmt(s)
    return names


# ---------------------------------------------------------------------------
# parsing (recursive descent over the content token stream)
# ---------------------------------------------------------------------------

class MiniLangSyntaxError(ValueError):
    pass


_CMP_OPS = ("==", "!=", "<", ">", "<=", ">=")
_ADD_OPS = ("+", "-")
_MUL_OPS = ("*", "/", "%")


class _Parser:
    def __init__(self, source: str):
        self.toks = content_tokens(lex(source, MINILANG))
        self.pos = 0

    def peek(self, offset: int = 0):
        i = self.pos + offset
        return self.toks[i] if i < len(self.toks) else None

    def take(self, text=None, kind=None):
        t = self.peek()
        if t is None:
            raise MiniLangSyntaxError("unexpected end of input")
        if text is not None and t.text != text:
            raise MiniLangSyntaxError(f"expected {text!r}, got {t.text!r}")
        if kind is not None and t.kind != kind:
            raise MiniLangSyntaxError(f"expected {kind}, got {t.kind} {t.text!r}")
        self.pos += 1
        return t

    def at(self, text: str) -> bool:
        t = self.peek()
        return t is not None and t.text == text

    def parse_func(self) -> Func:
        self.take("int")
        name = self.take(kind="identifier").text
        self.take("(")
        params = []
        if not self.at(")"):
            while True:
                self.take("int")
                params.append(self.take(kind="identifier").text)
                if self.at(","):
                    self.take(",")
                else:
                    break
        self.take(")")
        body = self.parse_block()
        if self.peek() is not None:
            raise MiniLangSyntaxError(f"trailing tokens after function: {self.peek().text!r}")
        return Func(name, tuple(params), body)

    def parse_block(self) -> tuple:
        self.take("{")
        stmts = []
        while not self.at("}"):
            stmts.append(self.parse_stmt())
        self.take("}")
        return tuple(stmts)

    def parse_stmt(self):
        t = self.peek()
        if t is None:
            raise MiniLangSyntaxError("unexpected end of input in block")
        if t.text == "int":
            self.take("int")
            name = self.take(kind="identifier").text
            self.take("=")
            expr = self.parse_expr()
            self.take(";")
            return Decl(name, expr)
        if t.text == "if":
            self.take("if")
            self.take("(")
            cond = self.parse_expr()
            self.take(")")
            return If(cond, self.parse_block())
        if t.text == "for":
            self.take("for")
            self.take("(")
            var = self.take(kind="identifier").text
            self.take("=")
            start = self.parse_expr()
            self.take(";")
            cond = self.parse_expr()
            self.take(";")
            step_var = self.take(kind="identifier").text
            self.take("=")
            step_expr = self.parse_expr()
            if step_var != var or step_expr != BinOp("+", Var(var), Lit(1)):
                raise MiniLangSyntaxError("only `v = v + 1` loop steps are supported")
            self.take(")")
            return For(var, start, cond, self.parse_block())
        if t.text == "return":
            self.take("return")
            expr = self.parse_expr()
            self.take(";")
            return Ret(expr)
        if t.kind == "identifier":
            nxt = self.peek(1)
            if nxt is not None and nxt.text == "(":
                call = self.parse_primary()
                self.take(";")
                return CallStmt(call)
            name = self.take(kind="identifier").text
            self.take("=")
            expr = self.parse_expr()
            self.take(";")
            return Assign(name, expr)
        raise MiniLangSyntaxError(f"cannot start a statement with {t.text!r}")

    def parse_expr(self):
        return self.parse_bool()

    def _parse_binop_level(self, ops, sub):
        node = sub()
        while True:
            t = self.peek()
            if t is None or t.text not in ops:
                return node
            op = self.take().text
            node = BinOp(op, node, sub())

    def parse_bool(self):
        return self._parse_binop_level(("&&", "||"), self.parse_cmp)

    def parse_cmp(self):
        return self._parse_binop_level(_CMP_OPS, self.parse_add)

    def parse_add(self):
        return self._parse_binop_level(_ADD_OPS, self.parse_mul)

    def parse_mul(self):
        return self._parse_binop_level(_MUL_OPS, self.parse_primary)

    def parse_primary(self):
        t = self.peek()
        if t is None:
            raise MiniLangSyntaxError("unexpected end of expression")
        if t.text == "(":
            self.take("(")
            inner = self.parse_expr()
            self.take(")")
            return inner
        if t.kind == "literal":
            self.take()
            return Lit(int(t.text))
        if t.text in ("true", "false"):
            self.take()
            return Lit(t.text == "true")
        if t.kind == "identifier":
            name = self.take().text
            if self.at("("):
                self.take("(")
                args = []
                if not self.at(")"):
                    while True:
                        args.append(self.parse_expr())
                        if self.at(","):
                            self.take(",")
                        else:
                            break
                self.take(")")
                return Call(name, tuple(args))
            return Var(name)
        raise MiniLangSyntaxError(f"unexpected token {t.text!r} in expression")


def parse(source: str) -> Func:
    return _Parser(source).parse_func()


# ---------------------------------------------------------------------------
# label oracle
# ---------------------------------------------------------------------------

def unwrap_identity(e):
    """Strip value-preserving wrappers: (x + 0) and (c && true)."""
    while isinstance(e, BinOp):
        if e.op == "+" and isinstance(e.right, Lit) \
                and not isinstance(e.right.value, bool) and e.right.value == 0:
            e = e.left
        elif e.op == "&&" and isinstance(e.right, Lit) and e.right.value is True:
            e = e.left
        else:
            break
    return e


def _guard_var(cond):
    """The variable v when cond is `v != 0` (through identity wrappers)."""
    cond = unwrap_identity(cond)
    if isinstance(cond, BinOp) and cond.op == "!=":
        left = unwrap_identity(cond.left)
        right = unwrap_identity(cond.right)
        if isinstance(left, Var) and isinstance(right, Lit) \
                and not isinstance(right.value, bool) and right.value == 0:
            return left.name
    return None


def _expr_vars(e, out: set):
    e = unwrap_identity(e)
    if isinstance(e, Var):
        out.add(e.name)
    elif isinstance(e, BinOp):
        _expr_vars(e.left, out)
        _expr_vars(e.right, out)
    elif isinstance(e, Call):
        for a in e.args:
            _expr_vars(a, out)


def _divisions(e, out: list):
    if isinstance(e, BinOp):
        if e.op == "/":
            out.append(e)
        _divisions(e.left, out)
        _divisions(e.right, out)
    elif isinstance(e, Call):
        for a in e.args:
            _divisions(a, out)


def oracle_label(program: Program) -> int:
    """Structural ground-truth label: 1 when any defect pattern is present.

    Pure function of the AST; identifier names never influence the result.
    """
    if program.func is None:
        raise ValueError("oracle_label needs an AST-backed program")

    defective = False
    released: dict = {}
    counter = [0]

    def stmt_exprs(s):
        if isinstance(s, (Decl, Assign, Ret)):
            return [s.expr]
        if isinstance(s, If):
            return [s.cond]
        if isinstance(s, For):
            return [s.start, s.cond]
        if isinstance(s, CallStmt):
            return [s.call]
        return []

    def visit(stmts, guards):
        nonlocal defective
        for s in stmts:
            counter[0] += 1
            order = counter[0]

            # use-after-release: any read of a name released earlier
            read: set = set()
            for e in stmt_exprs(s):
                _expr_vars(e, read)
            if isinstance(s, (Assign, Decl)):
                read.add(s.name)
            for name in read:
                if name in released and released[name] < order:
                    defective = True

            call = s.call if isinstance(s, CallStmt) else None
            if call is not None and call.func == "release" and len(call.args) == 1:
                target = unwrap_identity(call.args[0])
                if isinstance(target, Var):
                    released.setdefault(target.name, order)

            # unguarded variable division
            divs: list = []
            for e in stmt_exprs(s):
                _divisions(e, divs)
            for d in divs:
                divisor = unwrap_identity(d.right)
                if isinstance(divisor, Var) and divisor.name not in guards:
                    defective = True

            # off-by-one loop bound
            if isinstance(s, For):
                cond = unwrap_identity(s.cond)
                if isinstance(cond, BinOp) and cond.op == "<=":
                    defective = True
                visit(s.body, guards)
            elif isinstance(s, If):
                g = _guard_var(s.cond)
                visit(s.body, guards | {g} if g else guards)

    visit(program.func.body, frozenset())
    return 1 if defective else 0


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------

DEFAULT_NAME_POOL = (
    "count", "total", "idx", "index", "size", "len", "num", "val", "value",
    "tmp", "temp", "res", "result", "sum", "acc", "buf", "buffer", "data",
    "item", "key", "pos", "off", "offset", "limit", "bound", "step", "mask",
    "flag", "state", "node", "left", "right", "mid", "low", "high", "width",
    "depth", "rate", "cost", "gain", "score", "delta", "alpha", "beta",
    "theta", "coef", "bias", "seed", "tick", "span", "slot", "rank", "grade",
    "level", "order", "shift", "base", "head", "tail", "edge", "peak", "gap",
    "row", "col",
)


@dataclass(frozen=True)
class GenConfig:
    defect_rate: float = 0.5
    min_fillers: int = 1
    max_fillers: int = 2
    extra_construct_rate: float = 0.35
    name_pool: tuple = DEFAULT_NAME_POOL
    literal_max: int = 9
    # Probability that a fresh name is drawn from the class-typical half of
    # the pool instead of uniformly. Labels stay a pure function of
    # structure (renaming cannot flip them); the bias only recreates the
    # spurious name/label correlation real corpora exhibit, which is the
    # attack surface identifier-renaming adversaries exploit.
    name_bias: float = 0.5

    def to_dict(self) -> dict:
        return {"defect_rate": self.defect_rate, "min_fillers": self.min_fillers,
                "max_fillers": self.max_fillers, "name_pool": list(self.name_pool),
                "literal_max": self.literal_max, "name_bias": self.name_bias}

    @classmethod
    def from_dict(cls, d: dict) -> "GenConfig":
        d = dict(d)
        if "name_pool" in d:
            d["name_pool"] = tuple(d["name_pool"])
        return cls(**d)


def _rand_expr(rng, names, literal_max, depth=0):
    roll = rng.random()
    if depth >= 2 or roll < 0.45 or not names:
        if names and roll < 0.65:
            return Var(names[rng.integers(len(names))])
        return Lit(int(rng.integers(0, literal_max + 1)))
    op = ("+", "-", "*")[rng.integers(3)]
    return BinOp(op, _rand_expr(rng, names, literal_max, depth + 1),
                 _rand_expr(rng, names, literal_max, depth + 1))


def generate(seed, gen_config: GenConfig = GenConfig(), sample_id=0) -> LabeledSample:
    """Build one labelled program; deterministic in (seed, gen_config)."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    cfg = gen_config

    defective = bool(rng.random() < cfg.defect_rate)
    kind = DEFECT_KINDS[rng.integers(len(DEFECT_KINDS))] if defective else None

    # stable pool halves; the class-typical half depends on the label
    typical = [s for i, s in enumerate(cfg.name_pool) if i % 2 == int(defective)]
    everything = list(cfg.name_pool)
    rng.shuffle(typical)
    rng.shuffle(everything)

    def decorate(stem):
        roll = rng.random()
        if roll < 0.3:
            return stem + str(rng.integers(0, 10))
        if roll < 0.45:
            return f"{stem}_{rng.integers(0, 10)}"
        return stem

    def name_stream():
        used = set()
        while typical or everything:
            source = typical if (typical and rng.random() < cfg.name_bias) \
                else (everything or typical)
            stem = source.pop()
            if stem in used:
                continue
            used.add(stem)
            yield decorate(stem)

    names = name_stream()

    func_name = next(names)
    params = [next(names) for _ in range(int(rng.integers(1, 3)))]
    live = list(params)

    body: list = []

    def fillers(k):
        for _ in range(k):
            if live and rng.random() < 0.5:
                target = live[rng.integers(len(live))]
                body.append(Assign(target, _rand_expr(rng, live, cfg.literal_max)))
            else:
                fresh = next(names)
                body.append(Decl(fresh, _rand_expr(rng, live, cfg.literal_max)))
                live.append(fresh)

    def add_division(bad: bool):
        out = next(names)
        divisor = live[rng.integers(len(live))]
        numerator = _rand_expr(rng, [n for n in live if n != divisor], cfg.literal_max, depth=1)
        stmt = Decl(out, BinOp("/", numerator, Var(divisor)))
        if bad:
            body.append(stmt)
        else:
            body.append(If(BinOp("!=", Var(divisor), Lit(0)), (stmt,)))
            live.append(out)

    def add_loop(bad: bool):
        i = next(names)
        acc = next(names)
        body.append(Decl(acc, Lit(0)))
        live.append(acc)
        bound = Var(live[rng.integers(len(live))]) if rng.random() < 0.8 \
            else Lit(int(rng.integers(2, cfg.literal_max + 1)))
        op = "<=" if bad else "<"
        inner = Assign(acc, BinOp("+", Var(acc), Var(i)))
        body.append(For(i, Lit(0), BinOp(op, Var(i), bound), (inner,)))

    def add_release(bad: bool):
        buf = next(names)
        size = _rand_expr(rng, live, cfg.literal_max, depth=1)
        body.append(Decl(buf, Call("alloc", (size,))))
        if bad:
            body.append(CallStmt(Call("release", (Var(buf),))))
            body.append(CallStmt(Call("use", (Var(buf),))))
        else:
            body.append(CallStmt(Call("use", (Var(buf),))))
            body.append(CallStmt(Call("release", (Var(buf),))))
        # `buf` is retired either way: fillers must never touch it again

    builders = {"div_no_guard": add_division, "loop_bound": add_loop,
                "use_after_release": add_release}

    fillers(int(rng.integers(cfg.min_fillers, cfg.max_fillers + 1)))
    order = list(DEFECT_KINDS)
    rng.shuffle(order)
    for construct in order:
        if construct == kind:
            builders[construct](bad=True)
        elif rng.random() < cfg.extra_construct_rate:
            builders[construct](bad=False)
        if rng.random() < 0.25:
            fillers(1)
    body.append(Ret(_rand_expr(rng, live, cfg.literal_max, depth=1)))

    program = Program.from_func(Func(func_name, tuple(params), tuple(body)))
    label = oracle_label(program)
    expected = 1 if defective else 0
    if label != expected:
        raise AssertionError(
            f"generator produced label {label}, intended {expected} (kind={kind})")
    return LabeledSample(program, label, kind, sample_id)


def generate_corpus(seed: int, count: int, gen_config: GenConfig = GenConfig()) -> list:
    """Deterministic corpus; per-sample streams derived from (seed, index)."""
    from .seeding import derive_rng
    return [generate(derive_rng(seed, "gen", i), gen_config, sample_id=i)
            for i in range(count)]


# ---------------------------------------------------------------------------
# corpus files
# ---------------------------------------------------------------------------

def save_jsonl(samples, path):
    with open(path, "w", encoding="utf-8") as fh:
        for s in samples:
            fh.write(json.dumps({"id": s.sample_id, "code": s.program.source,
                                 "label": int(s.label),
                                 "defect_kind": s.defect_kind}) + "\n")


def load_jsonl(path, profile: LanguageProfile = MINILANG) -> list:
    """Read {id, code, label, defect_kind} lines; ASTs are recovered when the
    code parses as MiniLang, otherwise samples stay text-backed."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            d = json.loads(line)
            program = Program.from_source(d["code"], profile)
            out.append(LabeledSample(program, int(d["label"]),
                                     d.get("defect_kind"), d.get("id", len(out))))
    return out
