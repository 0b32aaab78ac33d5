"""Exact Deletion/Insertion step-sums on linear models and brute-force optimal orderings.

Two baseline regimes are covered: ``zero`` (removed features set to 0) and
``uniform`` (removed features get ``+xi``, ``xi ~ U[0, 1]``, handled in
expectation with ``E[xi] = 1/2``, which is exact by linearity).

Orderings are tuples of 0-based feature indices, most important first.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

REGIMES = ("zero", "uniform")
MAX_D = 8


@dataclass(frozen=True)
class TheoryInstance:
    x: np.ndarray
    w: np.ndarray
    b: float = 0.0

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.float64).ravel()
        w = np.asarray(self.w, dtype=np.float64).ravel()
        if x.shape != w.shape or x.size < 2:
            raise ValueError("x and w must share a length d >= 2")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "w", w)

    @property
    def d(self) -> int:
        return self.x.size

    @property
    def contributions(self) -> np.ndarray:
        return self.x * self.w


def _check_ordering(ordering, d: int) -> tuple[int, ...]:
    order = tuple(int(i) for i in ordering)
    if sorted(order) != list(range(d)):
        raise ValueError(f"ordering {order} is not a permutation of 0..{d - 1}")
    return order


def _coefficients(inst: TheoryInstance, regime: str) -> np.ndarray:
    """Per-feature change of f when the feature is removed."""
    if regime == "zero":
        return -inst.contributions
    if regime == "uniform":
        return 0.5 * inst.w
    raise ValueError(f"unknown regime {regime!r}; expected one of {REGIMES}")


def exact_deletion_sum(inst: TheoryInstance, ordering, regime: str = "zero") -> float:
    """``sum_{i=1..d} f(Pi(x, u_{1:i}))``.

    zero:    ``d (xw + b) - sum_i (d - i + 1) x_{u_i} w_{u_i}``
    uniform: ``d (xw + b) + 1/2 sum_i (d - i + 1) w_{u_i}``
    """
    d = inst.d
    order = _check_ordering(ordering, d)
    c = _coefficients(inst, regime)
    base = d * (float(inst.x @ inst.w) + inst.b)
    return base + sum((d - i) * c[u] for i, u in enumerate(order))


def exact_insertion_sum(inst: TheoryInstance, ordering, regime: str = "zero") -> float:
    """``sum_{i=1..d} f(Pi(x, not u_{1:i}))``: only the top ``i`` features are kept."""
    d = inst.d
    order = _check_ordering(ordering, d)
    c = _coefficients(inst, regime)
    base = d * (float(inst.x @ inst.w) + inst.b)
    # feature at position i (0-based) is still removed for the i steps before it is restored
    return base + sum(i * c[u] for i, u in enumerate(order))


@dataclass(frozen=True)
class OrderingVerdict:
    regime: str
    deletion_optima: frozenset[tuple[int, ...]]
    deletion_value: float
    insertion_optima: frozenset[tuple[int, ...]]
    insertion_value: float
    # monotone families: "descending"/"ascending" if the optimum set equals the
    # orderings sorted that way by the key, else None
    contribution_direction: str | None = None
    weight_direction: str | None = None
    insertion_contribution_direction: str | None = None
    insertion_weight_direction: str | None = None


def monotone_orderings(key, descending: bool) -> frozenset[tuple[int, ...]]:
    """All orderings sorted by ``key`` in the given direction (ties in any order)."""
    key = np.asarray(key, dtype=np.float64)
    groups: dict[float, list[int]] = {}
    for i, v in enumerate(key):
        groups.setdefault(float(v), []).append(i)
    levels = sorted(groups, reverse=descending)
    out = {()}
    for lv in levels:
        out = {prefix + perm for prefix in out for perm in itertools.permutations(groups[lv])}
    return frozenset(out)


def _direction(optima: frozenset, key) -> str | None:
    if optima == monotone_orderings(key, descending=True):
        return "descending"
    if optima == monotone_orderings(key, descending=False):
        return "ascending"
    return None


def _argbest(values: dict, best) -> tuple[frozenset, float]:
    target = best(values.values())
    scale = max(1.0, max(abs(v) for v in values.values()))
    hits = frozenset(o for o, v in values.items() if abs(v - target) <= 1e-9 * scale)
    return hits, target


def brute_force_optimal(inst: TheoryInstance, regime: str = "zero") -> OrderingVerdict:
    """Enumerate all ``d!`` orderings; minimize Deletion and maximize Insertion."""
    if inst.d > MAX_D:
        raise ValueError(f"d={inst.d} too large for enumeration (max {MAX_D})")
    perms = list(itertools.permutations(range(inst.d)))
    dele = {p: exact_deletion_sum(inst, p, regime) for p in perms}
    ins = {p: exact_insertion_sum(inst, p, regime) for p in perms}
    d_opt, d_val = _argbest(dele, min)
    i_opt, i_val = _argbest(ins, max)
    return OrderingVerdict(
        regime=regime,
        deletion_optima=d_opt,
        deletion_value=d_val,
        insertion_optima=i_opt,
        insertion_value=i_val,
        contribution_direction=_direction(d_opt, inst.contributions),
        weight_direction=_direction(d_opt, inst.w),
        insertion_contribution_direction=_direction(i_opt, inst.contributions),
        insertion_weight_direction=_direction(i_opt, inst.w),
    )


def _tie_free(values: np.ndarray, tol: float = 1e-6) -> bool:
    s = np.sort(values)
    return bool(np.all(np.diff(s) > tol))


def random_instance(rng: np.random.Generator, d: int) -> TheoryInstance:
    """Random instance with distinct ``x*w`` and distinct ``w`` (resampled otherwise)."""
    while True:
        x = rng.uniform(0.0, 1.0, d)
        w = rng.normal(0.0, 1.0, d)
        b = float(rng.normal())
        if _tie_free(x * w) and _tie_free(w):
            return TheoryInstance(x, w, b)


@dataclass
class TheoryReport:
    """Outcome of a randomized verification suite."""

    name: str
    checked: int = 0
    failures: list[str] = field(default_factory=list)
    notes: dict[str, object] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.checked > 0 and not self.failures


def _dump(inst: TheoryInstance) -> str:
    return f"x={inst.x.tolist()} w={inst.w.tolist()} b={inst.b}"


def draw_instances(count: int = 100, dims=(3, 4, 5), seed: int = 0) -> list[TheoryInstance]:
    """The ``count`` tie-free instances per dimension used by the randomized checks."""
    rng = np.random.default_rng([seed, 0])
    return [random_instance(rng, d) for d in dims for _ in range(count)]


def check_baseline_dependence(
    count: int = 100, dims=(3, 4, 5), seed: int = 0, rerolls: int = 3
) -> dict[str, TheoryReport]:
    """Randomized check that the optimal Deletion ordering depends on the baseline.

    (a) zero regime: the optima are exactly the orderings monotone in ``x*w``,
        in one direction shared by every instance;
    (b) uniform regime: the optima are unchanged when ``x`` is re-randomized;
    (c) some instances have different optima in the two regimes.
    """
    reroll_rng = np.random.default_rng([seed, 1])
    a, b, c = TheoryReport("zero_monotone_in_contribution"), TheoryReport("uniform_depends_on_w_only"), TheoryReport("regimes_differ")
    zero_dirs, uni_dirs = set(), set()
    differing = 0
    for inst in draw_instances(count, dims, seed):
        d = inst.d
        vz = brute_force_optimal(inst, "zero")
        vu = brute_force_optimal(inst, "uniform")
        a.checked += 1
        if vz.contribution_direction is None:
            a.failures.append(f"zero optimum not monotone in x*w: {_dump(inst)}")
        zero_dirs.add(vz.contribution_direction)
        uni_dirs.add(vu.weight_direction)
        b.checked += 1
        for _ in range(rerolls):
            other = TheoryInstance(reroll_rng.uniform(-2.0, 2.0, d), inst.w, float(reroll_rng.normal()))
            if brute_force_optimal(other, "uniform").deletion_optima != vu.deletion_optima:
                b.failures.append(f"uniform optimum changed with x: {_dump(inst)} vs {_dump(other)}")
                break
        c.checked += 1
        differing += vz.deletion_optima != vu.deletion_optima
    if len(zero_dirs) != 1:
        a.failures.append(f"zero-regime direction not constant across instances: {zero_dirs}")
    a.notes["direction"] = sorted(str(v) for v in zero_dirs)
    b.notes["weight_direction"] = sorted(str(v) for v in uni_dirs)
    c.notes["differing_instances"] = differing
    if differing == 0:
        c.failures.append("no instance had regime-dependent optima")
    return {r.name: r for r in (a, b, c)}


def check_corollary_insertion(count: int = 100, dims=(3, 4, 5), seed: int = 0) -> TheoryReport:
    """Every instance: the Insertion maximizers coincide with the Deletion minimizers, per regime."""
    report = TheoryReport("insertion_matches_deletion")
    for inst in draw_instances(count, dims, seed):
        for regime in REGIMES:
            v = brute_force_optimal(inst, regime)
            report.checked += 1
            if v.insertion_optima != v.deletion_optima:
                report.failures.append(f"{regime}: insertion optimum differs: {_dump(inst)}")
    return report
