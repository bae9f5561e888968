"""Black-box identifier-renaming attacks and the ASR harness.

All three attacks search over rename maps: substitutes come from a fixed
name pool plus generated camelCase strings, never from keywords, builtins,
or names already in the program. Every intermediate program is produced by
`rename_identifiers`, so the label oracle is untouched by construction.

A target model must expose:
    predict_proba_ids(ids) -> np.ndarray   class probabilities for a sequence
    analyze(source) -> (SubwordSeq, IdentifierMap)
    unknown_id -> int
Query counts report the number of predict_proba_ids calls.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .lexer import MINILANG, LanguageProfile
from .minilang import LabeledSample
from .seeding import derive_rng
from .transforms import rename_identifiers

_ADJECTIVES = (
    "new", "old", "next", "prev", "last", "first", "max", "min", "raw",
    "cur", "best", "safe", "fast", "slow", "deep", "flat", "full", "half",
    "open", "done", "busy", "cold", "warm", "late", "dual", "near", "far",
)
_NOUNS = (
    "Value", "Count", "Index", "Total", "Buffer", "Item", "Node", "Size",
    "Limit", "Offset", "Score", "State", "Flag", "Key", "Slot", "Rank",
    "Width", "Depth", "Cost", "Rate", "Gap", "Edge", "Peak", "Head", "Tail",
    "Cache", "Queue", "Stack", "Token", "Chunk",
)


def _default_pool() -> tuple:
    """camelCase compounds plus decorated variants of common stems; the mix
    covers both out-of-vocabulary and near-in-vocabulary substitutes."""
    from .minilang import DEFAULT_NAME_POOL
    names = [a + n for a in _ADJECTIVES for n in _NOUNS]
    for i, stem in enumerate(DEFAULT_NAME_POOL):
        names.append(f"{stem}{(i * 7) % 10}")
        names.append(f"{stem}_{(i * 3) % 10}")
        names.append(f"my{stem.capitalize()}")
    return tuple(dict.fromkeys(names))


DEFAULT_ATTACK_POOL = _default_pool()


class AttackError(ValueError):
    pass


@dataclass(frozen=True)
class AttackConfig:
    budget: int = 400          # MHM iterations
    candidates: int = 30       # substitute pool size per identifier
    population: int = 30       # genetic population
    generations: int = 50      # genetic generation budget
    mutation_rate: float = 0.3
    seed: int = 0
    pool: tuple = DEFAULT_ATTACK_POOL

    def to_dict(self) -> dict:
        return {"budget": self.budget, "candidates": self.candidates,
                "population": self.population, "generations": self.generations,
                "mutation_rate": self.mutation_rate, "seed": self.seed}


@dataclass
class AttackOutcome:
    success: bool
    rename_map: dict
    queries: int
    prob_trace: list


@dataclass
class AttackReport:
    attack: str
    n_plus: int
    n_minus: int
    asr: float | None          # None when no sample was clean-correct
    per_sample: list
    mode: str = ""
    seed: int = 0

    @property
    def undefined(self) -> bool:
        return self.asr is None

    def to_dict(self) -> dict:
        return {"attack": self.attack, "n_plus": self.n_plus, "n_minus": self.n_minus,
                "asr": self.asr, "asr_undefined": self.undefined,
                "per_sample": self.per_sample, "mode": self.mode, "seed": self.seed}

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=1, sort_keys=True)


def generate_fresh_names(rng: np.random.Generator, count: int, exclude=frozenset(),
                         profile: LanguageProfile = MINILANG) -> list:
    """Random camelCase identifiers avoiding `exclude` and reserved words."""
    out: list = []
    taken = set(exclude) | profile.keywords | profile.builtins
    while len(out) < count:
        name = _ADJECTIVES[rng.integers(len(_ADJECTIVES))] \
            + _NOUNS[rng.integers(len(_NOUNS))]
        if rng.random() < 0.5:
            name += str(rng.integers(0, 100))
        if name not in taken:
            out.append(name)
            taken.add(name)
    return out


def candidate_names(pool, count: int, rng: np.random.Generator,
                    exclude=frozenset(), profile: LanguageProfile = MINILANG) -> list:
    """Draw `count` distinct substitute names from `pool`.

    Names colliding with keywords, builtins, or `exclude` (typically the
    target program's identifiers) are filtered out first; an over-drawn pool
    raises rather than recycling names.
    """
    if count < 1:
        raise AttackError("candidate_names: count must be >= 1")
    taken = set(exclude) | profile.keywords | profile.builtins
    usable = [name for name in pool if name not in taken]
    if len(usable) < count:
        raise AttackError(
            f"candidate pool exhausted: need {count}, have {len(usable)} after exclusions")
    picked = rng.choice(len(usable), size=count, replace=False)
    return [usable[i] for i in sorted(picked)]


class _Target:
    """Query-counting, memoizing view of the model for one attacked sample."""

    def __init__(self, model, sample: LabeledSample,
                 profile: LanguageProfile = MINILANG):
        self.model = model
        self.sample = sample
        self.profile = profile
        self.queries = 0
        self._by_map: dict = {}

    def proba_ids(self, ids) -> np.ndarray:
        self.queries += 1
        return self.model.predict_proba_ids(ids)

    def proba_map(self, mapping: dict) -> np.ndarray:
        key = tuple(sorted(mapping.items()))
        hit = self._by_map.get(key)
        if hit is not None:
            return hit
        program = rename_identifiers(self.sample.program, mapping, self.profile)
        seq, _ = self.model.analyze(program.source)
        probs = self.proba_ids(seq.ids)
        self._by_map[key] = probs
        return probs


def _identifier_pools(sample: LabeledSample, cfg: AttackConfig,
                      rng: np.random.Generator, profile: LanguageProfile) -> dict:
    """Disjoint candidate pools per identifier, so any gene combination is a
    valid rename map (pairwise distinct, collision-free)."""
    names = sorted(sample.program.identifiers)
    drawn = candidate_names(cfg.pool, cfg.candidates * len(names), rng,
                            exclude=sample.program.identifiers, profile=profile)
    return {name: drawn[i * cfg.candidates: (i + 1) * cfg.candidates]
            for i, name in enumerate(names)}


def _clean_probs(target: _Target, clean_probs) -> np.ndarray:
    if clean_probs is not None:
        return np.asarray(clean_probs)
    return target.proba_map({})


def mhm_acceptance_probability(p_current: float, p_proposed: float) -> float:
    """min(1, (1 - P(y|x')) / (1 - P(y|x))); at P(y|x) == 1 the proposal is
    accepted exactly when it loses probability mass."""
    if p_current >= 1.0:
        return 1.0 if p_proposed < 1.0 else 0.0
    return min(1.0, (1.0 - p_proposed) / (1.0 - p_current))


def mhm_attack(model, sample: LabeledSample, cfg: AttackConfig,
               rng: np.random.Generator, clean_probs=None,
               profile: LanguageProfile = MINILANG) -> AttackOutcome:
    """Metropolis-Hastings style identifier renaming.

    Each iteration proposes a substitute for one uniformly chosen identifier
    and accepts it with probability min(1, (1 - P(y|x')) / (1 - P(y|x))).
    Proposals cycle through each identifier's pool without replacement, so a
    budget of at least the pool size tries every candidate of a
    single-identifier program.
    """
    names = sorted(sample.program.identifiers)
    if not names:
        return AttackOutcome(False, {}, 0, [])
    target = _Target(model, sample, profile)
    pools = _identifier_pools(sample, cfg, rng, profile)
    label = int(sample.label)

    probs = _clean_probs(target, clean_probs)
    if int(probs.argmax()) != label:
        return AttackOutcome(False, {}, target.queries, [float(probs[label])])

    current: dict = {}
    p_true = float(probs[label])
    trace = [p_true]
    tried = {name: set() for name in names}

    for _ in range(cfg.budget):
        name = names[rng.integers(len(names))]
        untried = [c for c in pools[name]
                   if c not in tried[name] and c != current.get(name)]
        if not untried:
            tried[name].clear()
            untried = [c for c in pools[name] if c != current.get(name)]
        candidate = untried[rng.integers(len(untried))]
        tried[name].add(candidate)

        proposal = dict(current)
        proposal[name] = candidate
        proposed = target.proba_map(proposal)
        p_new = float(proposed[label])
        if int(proposed.argmax()) != label:
            trace.append(p_new)
            return AttackOutcome(True, proposal, target.queries, trace)
        ratio = mhm_acceptance_probability(p_true, p_new)
        if ratio >= 1.0 or rng.random() < ratio:
            current, p_true = proposal, p_new
        trace.append(p_true)

    return AttackOutcome(False, current, target.queries, trace)


def greedy_attack(model, sample: LabeledSample, cfg: AttackConfig,
                  clean_probs=None, profile: LanguageProfile = MINILANG) -> AttackOutcome:
    """Importance-ranked greedy substitution.

    Identifier importance is the drop in P(y_true) when its sub-words are
    masked with the unknown symbol. In rank order, each identifier takes the
    candidate minimizing P(y_true); substitutions that do not lower it are
    rolled back. Deterministic given cfg.seed and the sample id.
    """
    names = sorted(sample.program.identifiers)
    if not names:
        return AttackOutcome(False, {}, 0, [])
    target = _Target(model, sample, profile)
    rng = derive_rng(cfg.seed, "greedy", str(sample.sample_id))
    pools = _identifier_pools(sample, cfg, rng, profile)
    label = int(sample.label)

    probs = _clean_probs(target, clean_probs)
    if int(probs.argmax()) != label:
        return AttackOutcome(False, {}, target.queries, [float(probs[label])])
    p_current = float(probs[label])
    trace = [p_current]

    seq, idmap = model.analyze(sample.program.source)
    occurrences = {e.name: e.ranges() for e in idmap.entries}
    importance = []
    for name in names:
        ranges = occurrences.get(name)
        if not ranges:
            importance.append((0.0, name))
            continue
        masked = np.array(seq.ids, dtype=np.int32, copy=True)
        for p, q in ranges:
            masked[p:q] = model.unknown_id
        p_masked = float(target.proba_ids(masked)[label])
        importance.append((p_current - p_masked, name))
    ranked = sorted(importance, key=lambda t: (-t[0], t[1]))

    current: dict = {}
    for _, name in ranked:
        best_name, best_probs, best_p = None, None, None
        for candidate in pools[name]:
            proposal = dict(current)
            proposal[name] = candidate
            proposed = target.proba_map(proposal)
            p_new = float(proposed[label])
            if best_p is None or p_new < best_p:
                best_name, best_probs, best_p = candidate, proposed, p_new
        proposal = dict(current)
        proposal[name] = best_name
        if int(best_probs.argmax()) != label:
            trace.append(best_p)
            return AttackOutcome(True, proposal, target.queries, trace)
        if best_p < p_current:
            current, p_current = proposal, best_p
        trace.append(p_current)

    return AttackOutcome(False, current, target.queries, trace)


def genetic_attack(model, sample: LabeledSample, cfg: AttackConfig,
                   rng: np.random.Generator, clean_probs=None,
                   profile: LanguageProfile = MINILANG) -> AttackOutcome:
    """Genetic search over rename maps.

    Chromosomes assign one candidate per identifier; fitness is
    1 - P(y_true | renamed). Fitness-proportional selection, uniform
    per-gene crossover, single-gene mutation, and elitism on the best
    chromosome. Stops on a prediction flip or after the generation budget.
    """
    if cfg.population < 2:
        raise AttackError("genetic_attack: population must be >= 2")
    names = sorted(sample.program.identifiers)
    if not names:
        return AttackOutcome(False, {}, 0, [])
    target = _Target(model, sample, profile)
    pools = _identifier_pools(sample, cfg, rng, profile)
    label = int(sample.label)

    probs = _clean_probs(target, clean_probs)
    if int(probs.argmax()) != label:
        return AttackOutcome(False, {}, target.queries, [float(probs[label])])
    trace = [float(probs[label])]

    def to_map(chrom) -> dict:
        return {name: pools[name][gene] for name, gene in zip(names, chrom)}

    flip: list = []

    def fitness(chrom) -> float:
        p = target.proba_map(to_map(chrom))
        if int(p.argmax()) != label and not flip:
            flip.append(chrom)
        return 1.0 - float(p[label])

    m = len(names)
    population = [tuple(int(rng.integers(cfg.candidates)) for _ in range(m))
                  for _ in range(cfg.population)]
    scores = []
    for chrom in population:
        scores.append(fitness(chrom))
        if flip:
            trace.append(1.0 - scores[-1])
            return AttackOutcome(True, to_map(flip[0]), target.queries, trace)

    for _ in range(cfg.generations):
        best = int(np.argmax(scores))
        trace.append(1.0 - scores[best])
        total = float(sum(scores))
        if total > 0.0:
            weights = np.asarray(scores, dtype=np.float64) / total
        else:
            weights = np.full(len(scores), 1.0 / len(scores))
        children = [population[best]]
        while len(children) < cfg.population:
            pa = population[int(rng.choice(len(population), p=weights))]
            pb = population[int(rng.choice(len(population), p=weights))]
            child = tuple(pa[j] if rng.random() < 0.5 else pb[j] for j in range(m))
            if rng.random() < cfg.mutation_rate:
                j = int(rng.integers(m))
                child = child[:j] + (int(rng.integers(cfg.candidates)),) + child[j + 1:]
            children.append(child)
        population = children
        scores = []
        for chrom in population:
            scores.append(fitness(chrom))
            if flip:
                trace.append(1.0 - scores[-1])
                return AttackOutcome(True, to_map(flip[0]), target.queries, trace)

    best = int(np.argmax(scores))
    trace.append(1.0 - scores[best])
    return AttackOutcome(False, to_map(population[best]), target.queries, trace)


ATTACKS = {"mhm": mhm_attack, "greedy": greedy_attack, "genetic": genetic_attack}


def evaluate_asr(model, testset: list, attack, cfg: AttackConfig,
                 profile: LanguageProfile = MINILANG, mode: str = "") -> AttackReport:
    """Attack every clean-correct sample and report ASR = N- / N+.

    Per-sample randomness derives from (cfg.seed, sample index), so reports
    are reproducible. With zero clean-correct samples the ASR is undefined
    and flagged instead of fabricated.
    """
    if not testset:
        raise AttackError("evaluate_asr: testset is empty")
    attack_name = attack if isinstance(attack, str) else attack.__name__.replace("_attack", "")
    attack_fn = ATTACKS[attack] if isinstance(attack, str) else attack

    n_plus = 0
    n_minus = 0
    per_sample = []
    for index, sample in enumerate(testset):
        seq, _ = model.analyze(sample.program.source)
        probs = model.predict_proba_ids(seq.ids)
        if int(probs.argmax()) != int(sample.label):
            continue
        n_plus += 1
        rng = derive_rng(cfg.seed, "attack", attack_name, index)
        if attack_fn is greedy_attack:
            outcome = attack_fn(model, sample, cfg, clean_probs=probs, profile=profile)
        else:
            outcome = attack_fn(model, sample, cfg, rng, clean_probs=probs, profile=profile)
        if outcome.success:
            n_minus += 1
        per_sample.append({"id": sample.sample_id, "success": bool(outcome.success),
                           "queries": int(outcome.queries)})
    asr = (n_minus / n_plus) if n_plus else None
    return AttackReport(attack=attack_name, n_plus=n_plus, n_minus=n_minus,
                        asr=asr, per_sample=per_sample, mode=mode, seed=cfg.seed)
