"""Exact discrete information measures and brute-force checks of fusion gain, DPI and the chain rule.

A :class:`JointDistribution` is a full probability table over a handful of
small-arity variables; variable 0 is the label ``y`` and variables
``1..N`` are the bank entries ``b_1..b_N``.  All quantities are in bits.

The checks here are exact (no sampling), so the inequalities they test are
decided up to floating-point rounding only:

* data processing: ``I(y; z) <= I(y; x)`` whenever ``z`` depends on ``y``
  only through ``x``;
* chain rule: ``I(y; b1, b2) = I(y; b1) + I(b2; y | b1)``;
* aggregation beats the best single source: if every pair of sources is
  complementary, ``I(y; b_1..b_N) > max_i I(y; b_i)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

MAX_STATES = 10**6
ASSUMPTION_TOL = 1e-6
GAIN_MARGIN = 1e-9
DPI_TOL = 1e-10


class UsageError(ValueError):
    pass


def _axes(s: Iterable[int]) -> tuple[int, ...]:
    return tuple(sorted({int(i) for i in s}))


@dataclass
class JointDistribution:
    arities: tuple[int, ...]
    table: np.ndarray

    def __post_init__(self):
        self.arities = tuple(int(a) for a in self.arities)
        if not self.arities or min(self.arities) < 1:
            raise UsageError(f"arities must be positive, got {self.arities}")
        size = math.prod(self.arities)
        if size > MAX_STATES:
            raise UsageError(f"product space has {size} states, limit is {MAX_STATES}")
        table = np.asarray(self.table, dtype=np.float64).reshape(-1)
        if table.size != size:
            raise UsageError(f"table has {table.size} entries, arities {self.arities} need {size}")
        if np.any(table < 0) or not np.isfinite(table).all():
            raise UsageError("probabilities must be finite and non-negative")
        if abs(table.sum() - 1.0) > 1e-12:
            raise UsageError(f"probabilities sum to {table.sum()!r}, not 1")
        self.table = table

    @property
    def n_vars(self) -> int:
        return len(self.arities)

    @property
    def tensor(self) -> np.ndarray:
        return self.table.reshape(self.arities)

    def marginal(self, keep: Iterable[int]) -> np.ndarray:
        """Marginal over ``keep`` (in increasing variable order) as an n-d array."""
        keep = _axes(keep)
        self._check(keep)
        drop = tuple(i for i in range(self.n_vars) if i not in keep)
        return self.tensor.sum(axis=drop) if drop else self.tensor

    def _check(self, axes: tuple[int, ...]) -> None:
        for a in axes:
            if not 0 <= a < self.n_vars:
                raise UsageError(f"variable index {a} out of range for {self.n_vars} variables")

    @classmethod
    def from_function(cls, arities: Sequence[int], prob) -> "JointDistribution":
        """Build from ``prob(*values)`` evaluated on every joint outcome."""
        t = np.zeros(arities)
        for idx in np.ndindex(*arities):
            t[idx] = prob(*idx)
        return cls(tuple(arities), t.reshape(-1))


@dataclass
class Channel:
    """Row-stochastic ``p(out | in)`` of shape (in_arity, out_arity)."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.ndim != 2 or min(m.shape) < 1:
            raise UsageError(f"channel must be a non-empty 2-D table, got shape {m.shape}")
        if np.any(m < 0) or np.any(np.abs(m.sum(axis=1) - 1.0) > 1e-12):
            raise UsageError("channel rows must be non-negative and sum to 1")
        self.matrix = m

    @property
    def in_arity(self) -> int:
        return self.matrix.shape[0]

    @property
    def out_arity(self) -> int:
        return self.matrix.shape[1]

    @classmethod
    def deterministic(cls, mapping: Sequence[int], out_arity: int) -> "Channel":
        m = np.zeros((len(mapping), out_arity))
        m[np.arange(len(mapping)), mapping] = 1.0
        return cls(m)


def _expand(marg: np.ndarray, axes: tuple[int, ...], into: tuple[int, ...]) -> np.ndarray:
    """Reshape a marginal over ``axes`` so it broadcasts against one over ``into``."""
    shape = [marg.shape[axes.index(a)] if a in axes else 1 for a in into]
    return marg.reshape(shape)


def entropy(dist: JointDistribution, a: Iterable[int]) -> float:
    p = dist.marginal(a).reshape(-1)
    p = p[p > 0]
    return float(-(p * np.log2(p)).sum())


def conditional_mi(dist: JointDistribution, a, b, c=()) -> float:
    """``I(A; B | C)`` in bits by direct summation over the joint table.

    ``sum p(a,b,c) log2[p(a,b,c) p(c) / (p(a,c) p(b,c))]`` with 0 log 0 = 0.
    The two sides are put in a canonical order first, so the result is
    bit-for-bit symmetric in A and B.
    """
    a, b, c = _axes(a), _axes(b), _axes(c)
    if not a or not b:
        raise UsageError("both variable sets must be non-empty")
    if set(a) & set(b) or set(a) & set(c) or set(b) & set(c):
        raise UsageError(f"variable sets must be disjoint, got {a}, {b}, {c}")
    if b < a:
        a, b = b, a
    abc = _axes(a + b + c)
    ac, bc = _axes(a + c), _axes(b + c)
    p_abc = dist.marginal(abc)
    p_ac = _expand(dist.marginal(ac), ac, abc)
    p_bc = _expand(dist.marginal(bc), bc, abc)
    if c:
        p_c = _expand(dist.marginal(c), c, abc)
        num = p_abc * p_c
    else:
        num = p_abc
    den = p_ac * p_bc
    mask = p_abc > 0
    value = float(np.sum(p_abc[mask] * np.log2(num[mask] / den[mask])))
    if value < -1e-12:
        raise ArithmeticError(f"negative mutual information {value!r}")
    return max(value, 0.0)


def mutual_information(dist: JointDistribution, a, b) -> float:
    return conditional_mi(dist, a, b, ())


def compose(dist: JointDistribution, var: int, channel: Channel) -> JointDistribution:
    """Append a new variable ``z`` drawn from ``channel`` given variable ``var``."""
    if not 0 <= var < dist.n_vars:
        raise UsageError(f"variable index {var} out of range")
    if channel.in_arity != dist.arities[var]:
        raise UsageError(f"channel takes {channel.in_arity} inputs, variable {var} has arity {dist.arities[var]}")
    t = dist.tensor
    k = _expand(channel.matrix, (var, dist.n_vars), tuple(range(dist.n_vars + 1)))
    joint = t[..., None] * k
    return JointDistribution(dist.arities + (channel.out_arity,), joint.reshape(-1))


def random_joint(arities: Sequence[int], seed) -> JointDistribution:
    """Normalised i.i.d. exponentials, i.e. a flat-Dirichlet draw over the table."""
    arities = tuple(int(a) for a in arities)
    if not arities or min(arities) < 1:
        raise UsageError(f"arities must be positive, got {arities}")
    rng = np.random.default_rng(seed)
    e = rng.exponential(size=math.prod(arities))
    return JointDistribution(arities, e / e.sum())


def random_channel(in_arity: int, out_arity: int, seed) -> Channel:
    rng = np.random.default_rng(seed)
    e = rng.exponential(size=(in_arity, out_arity))
    return Channel(e / e.sum(axis=1, keepdims=True))


# ----------------------------------------------------------------------------
# checks


@dataclass
class DPIReport:
    i_yx: float
    i_yz: float

    @property
    def gap(self) -> float:
        return self.i_yx - self.i_yz

    @property
    def holds(self) -> bool:
        return self.i_yz <= self.i_yx + DPI_TOL


def check_dpi(dist: JointDistribution, channel: Channel) -> DPIReport:
    """``dist`` is over (y, x); z is drawn from ``channel`` given x alone."""
    if dist.n_vars != 2:
        raise UsageError(f"expected a distribution over (y, x), got {dist.n_vars} variables")
    full = compose(dist, 1, channel)
    return DPIReport(mutual_information(full, [0], [1]), mutual_information(full, [0], [2]))


@dataclass
class ChainRuleReport:
    joint: float
    first: float
    conditional: float

    @property
    def error(self) -> float:
        return abs(self.joint - self.first - self.conditional)


def check_chain_rule(dist: JointDistribution) -> ChainRuleReport:
    """``I(y; b1, b2)`` against ``I(y; b1) + I(b2; y | b1)`` on a (y, b1, b2) table."""
    if dist.n_vars != 3:
        raise UsageError("expected a distribution over (y, b1, b2)")
    return ChainRuleReport(
        mutual_information(dist, [0], [1, 2]),
        mutual_information(dist, [0], [1]),
        conditional_mi(dist, [2], [0], [1]),
    )


@dataclass
class FusionGainReport:
    joint: float  # I(y; b_1..b_N), what any sufficient aggregate attains
    singles: list[float]  # I(y; b_i), the ceiling for anything learned from b_i alone
    pairwise: dict[tuple[int, int], float] = field(default_factory=dict)  # I(b_i; y | b_j)
    grouped: list[float] = field(default_factory=list)  # I(b_{-i}; y | b_i)
    tol: float = ASSUMPTION_TOL

    @property
    def best_single(self) -> float:
        return max(self.singles)

    @property
    def best_match(self) -> int:
        """0-based index of the most informative single source."""
        return int(np.argmax(self.singles))

    @property
    def margin(self) -> float:
        return self.joint - self.best_single

    @property
    def pairwise_margin(self) -> float:
        return min(self.pairwise.values())

    @property
    def grouped_margin(self) -> float:
        return min(self.grouped)

    @property
    def assumption_ok(self) -> bool:
        return self.pairwise_margin > self.tol

    @property
    def status(self) -> str:
        if not self.assumption_ok:
            return "assumption not satisfied"
        return "pass" if self.margin > GAIN_MARGIN else "FAIL"

    @property
    def holds(self) -> bool | None:
        """None when the complementarity precondition fails."""
        return None if not self.assumption_ok else self.margin > GAIN_MARGIN


def verify_fusion_gain(dist: JointDistribution, tol: float = ASSUMPTION_TOL) -> FusionGainReport:
    """Compare the whole bank's label information with the best single source.

    Complementarity is checked pairwise, ``I(b_i; y | b_j) > tol`` for all
    ``i != j``.  The grouped form ``I(b_{-i}; y | b_i)`` is reported as
    well; it is what separates ``I(y; b_1..b_N)`` from ``I(y; b_i)``.
    """
    n = dist.n_vars - 1
    if n < 2:
        raise UsageError("need the label and at least two bank variables")
    bank = list(range(1, n + 1))
    report = FusionGainReport(
        joint=mutual_information(dist, [0], bank),
        singles=[mutual_information(dist, [0], [i]) for i in bank],
        tol=tol,
    )
    for i in bank:
        for j in bank:
            if i != j:
                report.pairwise[(i, j)] = conditional_mi(dist, [i], [0], [j])
        report.grouped.append(conditional_mi(dist, [k for k in bank if k != i], [0], [i]))
    return report


# ----------------------------------------------------------------------------
# canonical instances


def xor_instance() -> JointDistribution:
    """Fair independent bits b1, b2 and y = b1 xor b2; variables (y, b1, b2)."""
    return JointDistribution.from_function((2, 2, 2), lambda y, b1, b2: 0.25 * (y == b1 ^ b2))


def pair_copy_instance() -> JointDistribution:
    """y = (b1, b2) encoded as 2*b1 + b2 with fair independent bits."""
    return JointDistribution.from_function((4, 2, 2), lambda y, b1, b2: 0.25 * (y == 2 * b1 + b2))


def redundant_instance() -> JointDistribution:
    """b2 = b1 = y, a fair bit; no source adds anything to the other."""
    return JointDistribution.from_function((2, 2, 2), lambda y, b1, b2: 0.5 * (y == b1 == b2))


CANONICAL = {
    "xor": xor_instance,
    "pair-copy": pair_copy_instance,
    "redundant": redundant_instance,
}


# ----------------------------------------------------------------------------
# randomized sweeps


@dataclass
class SweepRow:
    suite: str
    instance: str
    seed: int
    arities: tuple[int, ...]
    lhs: float
    rhs: float
    margin: float
    assumption_margin: float | None
    status: str

    @property
    def passed(self) -> bool:
        return self.status == "pass"


_SUITE_IDS = {"dpi": 1, "chain": 2, "fusion_gain": 3}


def _instance_seeds(seed: int, suite: str, count: int) -> list[int]:
    ss = np.random.SeedSequence([seed, _SUITE_IDS[suite]])
    return [int(s) for s in ss.generate_state(count, dtype=np.uint64)]


def _arities(rng: np.random.Generator, k: int, max_arity: int) -> tuple[int, ...]:
    return tuple(int(a) for a in rng.integers(2, max_arity + 1, size=k))


def _check_max_arity(max_arity: int) -> None:
    if max_arity < 2:
        raise UsageError(f"max arity must be at least 2, got {max_arity}")


def dpi_sweep(count: int, seed: int, max_arity: int = 4) -> list[SweepRow]:
    _check_max_arity(max_arity)
    rows = []
    for i, s in enumerate(_instance_seeds(seed, "dpi", count)):
        rng = np.random.default_rng(s)
        ar = _arities(rng, 3, max_arity)
        rep = check_dpi(random_joint(ar[:2], rng), random_channel(ar[1], ar[2], rng))
        rows.append(SweepRow("dpi", f"random{i}", s, ar, rep.i_yz, rep.i_yx, rep.gap, None,
                             "pass" if rep.holds else "FAIL"))
    return rows


def chain_rule_sweep(count: int, seed: int, max_arity: int = 4, tol: float = 1e-10) -> list[SweepRow]:
    _check_max_arity(max_arity)
    rows = []
    for i, s in enumerate(_instance_seeds(seed, "chain", count)):
        rng = np.random.default_rng(s)
        ar = _arities(rng, 3, max_arity)
        rep = check_chain_rule(random_joint(ar, rng))
        rows.append(SweepRow("chain-rule", f"random{i}", s, ar, rep.joint, rep.first + rep.conditional,
                             rep.error, None, "pass" if rep.error < tol else "FAIL"))
    return rows


def _fusion_gain_row(name: str, seed: int, dist: JointDistribution) -> SweepRow:
    rep = verify_fusion_gain(dist)
    return SweepRow("fusion_gain", name, seed, dist.arities, rep.joint, rep.best_single, rep.margin,
                    rep.pairwise_margin, rep.status)


def fusion_gain_sweep(
    count: int,
    seed: int,
    max_arity: int = 4,
    branch_counts: Sequence[int] = (2, 3),
    max_attempts: int | None = None,
) -> tuple[list[SweepRow], int]:
    """Random instances until ``count`` pass the complementarity precheck.

    Returns the qualifying rows and the number of rejected draws.
    """
    _check_max_arity(max_arity)
    max_attempts = 20 * count + 100 if max_attempts is None else max_attempts
    rows, rejected = [], 0
    for attempt, s in enumerate(_instance_seeds(seed, "fusion_gain", max_attempts)):
        if len(rows) == count:
            break
        rng = np.random.default_rng(s)
        n = int(rng.choice(branch_counts))
        dist = random_joint(_arities(rng, n + 1, max_arity), rng)
        row = _fusion_gain_row(f"random{attempt}", s, dist)
        if row.status == "assumption not satisfied":
            rejected += 1
            continue
        rows.append(row)
    return rows, rejected


def canonical_rows() -> list[SweepRow]:
    return [_fusion_gain_row(name, 0, make()) for name, make in CANONICAL.items()]


SWEEP_COLUMNS = ("suite", "instance", "seed", "arities", "lhs", "rhs", "margin", "assumption_margin", "status")


def format_rows(rows: list[SweepRow]) -> str:
    lines = [",".join(SWEEP_COLUMNS)]
    for r in rows:
        am = "" if r.assumption_margin is None else repr(r.assumption_margin)
        lines.append(",".join([
            r.suite, r.instance, str(r.seed), "x".join(map(str, r.arities)),
            repr(r.lhs), repr(r.rhs), repr(r.margin), am, r.status,
        ]))
    return "\n".join(lines) + "\n"
