"""Joint outcome distributions of the triangle network.

A distribution is a dense ``N x N x N`` array indexed by the outcomes of
Alice, Bob and Charlie.  Outcomes are labelled ``1..N`` at the public
surface; internally the array is zero-based.

Two backends are supported.  The exact backend stores
:class:`fractions.Fraction` entries in an object array, the float backend
stores ``float64``.  Conversion between them is always explicit.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Mapping

import numpy as np

MAX_OUTCOMES = 8
SUM_TOL = 1e-12
SYMMETRY_TOL = 1e-9

# Ternary plot corners: s112 bottom-left, s123 bottom-right, s111 on top.
CORNER_112 = (0.0, 0.0)
CORNER_123 = (1.0, 0.0)
CORNER_111 = (0.5, math.sqrt(3) / 2)


class ValidationError(ValueError):
    """Raised when an input violates a documented precondition."""


def to_fraction(value) -> Fraction:
    """Parse ``value`` (int, Fraction, ``"p/q"`` string or float) exactly."""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, (int, np.integer)):
        return Fraction(int(value))
    if isinstance(value, str):
        return Fraction(value.strip())
    if isinstance(value, (float, np.floating)):
        if not math.isfinite(value):
            raise ValidationError(f"non-finite value {value!r}")
        return Fraction(float(value))
    raise ValidationError(f"cannot interpret {value!r} as a number")


def is_exact(arr: np.ndarray) -> bool:
    return arr.dtype == object


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, copy=True)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class OutcomeDistribution:
    """Joint distribution ``p(a, b, c)`` over ``{1..N}^3``."""

    probs: np.ndarray

    def __post_init__(self):
        arr = self.probs
        if not isinstance(arr, np.ndarray):
            arr = np.asarray(arr)
        if arr.ndim != 3 or not (arr.shape[0] == arr.shape[1] == arr.shape[2]):
            raise ValidationError(f"expected an N x N x N array, got shape {arr.shape}")
        n = arr.shape[0]
        if not 1 <= n <= MAX_OUTCOMES:
            raise ValidationError(f"number of outcomes must be in 1..{MAX_OUTCOMES}, got {n}")
        if arr.dtype == object:
            if not all(type(x) is Fraction for x in arr.flat):
                arr = np.vectorize(to_fraction, otypes=[object])(arr)
            if any(x < 0 for x in arr.flat):
                raise ValidationError("negative probability")
            if sum(arr.flat, Fraction(0)) != 1:
                raise ValidationError("probabilities do not sum to 1")
        else:
            arr = arr.astype(np.float64)
            if not np.all(np.isfinite(arr)):
                raise ValidationError("non-finite probability")
            if arr.min() < 0:
                raise ValidationError("negative probability")
            if abs(arr.sum() - 1.0) > SUM_TOL * max(1, arr.size ** 0.5):
                raise ValidationError(f"probabilities sum to {arr.sum()!r}, not 1")
        object.__setattr__(self, "probs", _freeze(arr))

    @property
    def n_outcomes(self) -> int:
        return self.probs.shape[0]

    @property
    def exact(self) -> bool:
        return is_exact(self.probs)

    def __getitem__(self, abc):
        a, b, c = abc
        return self.probs[a - 1, b - 1, c - 1]

    def __eq__(self, other):
        if not isinstance(other, OutcomeDistribution):
            return NotImplemented
        return self.probs.shape == other.probs.shape and bool(np.all(self.probs == other.probs))

    def __hash__(self):
        return hash((self.n_outcomes, tuple(self.probs.flat)))

    def to_float(self) -> "OutcomeDistribution":
        return OutcomeDistribution(self.probs.astype(np.float64))

    def to_exact(self) -> "OutcomeDistribution":
        # Float entries are converted to their exact binary values and then
        # renormalised so the result sums to exactly one.
        arr = np.vectorize(to_fraction, otypes=[object])(self.probs)
        total = sum(arr.flat, Fraction(0))
        return OutcomeDistribution(arr / total)

    def marginal(self, party: int) -> np.ndarray:
        """Single-party marginal; ``party`` is 0 (Alice), 1 (Bob) or 2 (Charlie)."""
        axes = tuple(i for i in range(3) if i != party)
        return self.probs.sum(axis=axes)

    def pair_marginal(self, first: int, second: int) -> np.ndarray:
        other = ({0, 1, 2} - {first, second}).pop()
        out = self.probs.sum(axis=other)
        return out if first < second else out.T

    def to_json(self) -> dict:
        entries = []
        for a, b, c in itertools.product(range(self.n_outcomes), repeat=3):
            value = self.probs[a, b, c]
            if value == 0:
                continue
            entries.append({"a": a + 1, "b": b + 1, "c": c + 1,
                            "p": str(value) if self.exact else float(value)})
        return {"n_outcomes": self.n_outcomes, "probs": entries}

    @classmethod
    def from_json(cls, data: Mapping) -> "OutcomeDistribution":
        try:
            n = int(data["n_outcomes"])
            entries = data["probs"]
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"malformed distribution JSON: {exc}") from exc
        if not 1 <= n <= MAX_OUTCOMES:
            raise ValidationError(f"number of outcomes must be in 1..{MAX_OUTCOMES}")
        exact = all(isinstance(e.get("p"), (str, int)) for e in entries)
        arr = np.full((n, n, n), Fraction(0), dtype=object) if exact else np.zeros((n, n, n))
        for e in entries:
            a, b, c = int(e["a"]), int(e["b"]), int(e["c"])
            if not all(1 <= x <= n for x in (a, b, c)):
                raise ValidationError(f"outcome out of range in {e}")
            arr[a - 1, b - 1, c - 1] += to_fraction(e["p"]) if exact else float(e["p"])
        return cls(arr)

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=1)


def load_distribution(path) -> OutcomeDistribution:
    with open(path) as fh:
        return OutcomeDistribution.from_json(json.load(fh))


def save_distribution(dist: OutcomeDistribution, path) -> None:
    with open(path, "w") as fh:
        fh.write(dist.dumps())


@dataclass(frozen=True)
class SymCoords:
    """Weights of the three outcome classes: all equal, two equal, all distinct."""

    s111: object
    s112: object
    s123: object

    def __post_init__(self):
        values = (self.s111, self.s112, self.s123)
        if any(v < -SUM_TOL for v in values):
            raise ValidationError(f"negative symmetric coordinate in {values}")
        total = sum(values)
        if isinstance(total, Fraction) or isinstance(total, int):
            if total != 1:
                raise ValidationError(f"symmetric coordinates sum to {total}")
        elif abs(total - 1) > SUM_TOL:
            raise ValidationError(f"symmetric coordinates sum to {total}")

    def as_tuple(self):
        return (self.s111, self.s112, self.s123)

    @classmethod
    def of(cls, s111, s112, s123) -> "SymCoords":
        return cls(to_fraction(s111), to_fraction(s112), to_fraction(s123))


@dataclass(frozen=True)
class TernaryPoint:
    x: float
    y: float


def ternary_point(s: SymCoords) -> TernaryPoint:
    s111, s112, s123 = (float(v) for v in s.as_tuple())
    x = s112 * CORNER_112[0] + s123 * CORNER_123[0] + s111 * CORNER_111[0]
    y = s112 * CORNER_112[1] + s123 * CORNER_123[1] + s111 * CORNER_111[1]
    return TernaryPoint(x, y)


def from_ternary(point) -> SymCoords:
    x, y = point
    s111 = y / CORNER_111[1]
    s123 = x - s111 / 2
    return SymCoords(s111, 1 - s111 - s123, s123)


def class_masks(n: int) -> dict[str, np.ndarray]:
    """Boolean masks of the 111, 112 and 123 outcome classes."""
    a, b, c = np.meshgrid(np.arange(n), np.arange(n), np.arange(n), indexing="ij")
    distinct = (a != b).astype(int) + (b != c) + (a != c)
    return {"111": distinct == 0, "112": distinct == 2, "123": distinct == 3}


def class_sizes(n: int) -> dict[str, int]:
    return {"111": n, "112": 3 * n * (n - 1), "123": n * (n - 1) * (n - 2)}


def ejm_distribution() -> OutcomeDistribution:
    """The four-outcome reference distribution with fully symmetric structure."""
    n = 4
    masks = class_masks(n)
    arr = np.full((n, n, n), Fraction(1, 256), dtype=object)
    arr[masks["111"]] = Fraction(25, 256)
    arr[masks["123"]] = Fraction(5, 256)
    return OutcomeDistribution(arr)


def uniform_distribution(n: int, exact: bool = True) -> OutcomeDistribution:
    if exact:
        return OutcomeDistribution(np.full((n, n, n), Fraction(1, n ** 3), dtype=object))
    return OutcomeDistribution(np.full((n, n, n), 1.0 / n ** 3))


def deterministic(n: int, a: int, b: int, c: int) -> OutcomeDistribution:
    """Point mass ``[a, b, c]`` (1-based)."""
    arr = np.full((n, n, n), Fraction(0), dtype=object)
    arr[a - 1, b - 1, c - 1] = Fraction(1)
    return OutcomeDistribution(arr)


def sym_coords(p: OutcomeDistribution) -> SymCoords:
    masks = class_masks(p.n_outcomes)
    zero = Fraction(0) if p.exact else 0.0
    s111 = sum(p.probs[masks["111"]], zero)
    s123 = sum(p.probs[masks["123"]], zero)
    # Computed as the remainder so that the three classes sum to one exactly.
    s112 = (1 - s111 - s123) if p.exact else float(sum(p.probs[masks["112"]], 0.0))
    if not p.exact:
        return SymCoords(float(s111), s112, float(s123))
    return SymCoords(s111, s112, s123)


def extremal_distribution(kind, n_outcomes: int, exact: bool = True) -> OutcomeDistribution:
    """Uniform mixture over one outcome class."""
    kind = str(kind)
    if kind not in ("111", "112", "123"):
        raise ValidationError(f"unknown outcome class {kind!r}")
    if n_outcomes > MAX_OUTCOMES:
        raise ValidationError(f"at most {MAX_OUTCOMES} outcomes supported")
    if kind == "111" and n_outcomes < 1:
        raise ValidationError("need at least one outcome")
    if kind != "111" and n_outcomes < 3:
        raise ValidationError(f"class {kind} needs at least 3 outcomes")
    mask = class_masks(n_outcomes)[kind]
    size = class_sizes(n_outcomes)[kind]
    if exact:
        arr = np.full(mask.shape, Fraction(0), dtype=object)
        arr[mask] = Fraction(1, size)
    else:
        arr = np.where(mask, 1.0 / size, 0.0)
    return OutcomeDistribution(arr)


def from_sym_coords(s: SymCoords, n_outcomes: int) -> OutcomeDistribution:
    """Fully symmetric distribution with the given class weights.

    Classes with zero weight may be absent for small ``N``; a class with
    positive weight that does not exist at this ``N`` is rejected.
    """
    exact = all(isinstance(v, (Fraction, int)) for v in s.as_tuple())
    masks = class_masks(n_outcomes)
    sizes = class_sizes(n_outcomes)
    arr = (np.full(masks["111"].shape, Fraction(0), dtype=object) if exact
           else np.zeros(masks["111"].shape))
    for kind, weight in zip(("111", "112", "123"), s.as_tuple()):
        if sizes[kind] == 0:
            if weight != 0:
                raise ValidationError(f"class {kind} is empty for N={n_outcomes}")
            continue
        arr[masks[kind]] = (Fraction(weight) / sizes[kind]) if exact else float(weight) / sizes[kind]
    return OutcomeDistribution(arr)


def _outcome_permutations(n: int) -> list[tuple[int, ...]]:
    return list(itertools.permutations(range(n)))


def symmetrize(p: OutcomeDistribution) -> OutcomeDistribution:
    """Average over party permutations and joint outcome relabelings."""
    n = p.n_outcomes
    if n > MAX_OUTCOMES:
        raise ValidationError(f"symmetrisation limited to N <= {MAX_OUTCOMES}")
    # Party permutations first; the result is then averaged over the outcome
    # group.  Because full outcome averaging only depends on the class of
    # each triple, the orbit mean is the class mean.
    party_avg = sum(np.transpose(p.probs, axes) for axes in itertools.permutations(range(3)))
    party_avg = party_avg / 6 if not p.exact else party_avg * Fraction(1, 6)
    return from_sym_coords(sym_coords(OutcomeDistribution(party_avg)), n)


def orbit_means(p: OutcomeDistribution) -> np.ndarray:
    """Class means broadcast back onto the ``N^3`` grid."""
    return symmetrize(p).probs


def max_symmetry_deviation(p: OutcomeDistribution):
    """Largest distance of an entry from the mean of its symmetry orbit."""
    diff = p.probs - orbit_means(p)
    return max(abs(x) for x in diff.flat)


def is_fully_symmetric(p: OutcomeDistribution, tol: float = SYMMETRY_TOL) -> bool:
    dev = max_symmetry_deviation(p)
    if p.exact:
        return dev == 0
    return dev <= tol


@dataclass(frozen=True)
class FinnerReport:
    satisfied: bool
    worst_violation: float


def finner_check(p: OutcomeDistribution, tol: float = SUM_TOL) -> FinnerReport:
    """Check ``p(a,b,c) <= sqrt(pA(a) pB(b) pC(c))`` entrywise.

    On the exact backend the comparison is done by squaring both sides, so
    equality cases are decided without rounding.
    """
    pa, pb, pc = (p.marginal(i) for i in range(3))
    n = p.n_outcomes
    worst = -math.inf
    satisfied = True
    for a, b, c in itertools.product(range(n), repeat=3):
        lhs = p.probs[a, b, c]
        prod = pa[a] * pb[b] * pc[c]
        if p.exact and lhs * lhs > prod:
            satisfied = False
        gap = float(lhs) - math.sqrt(float(prod))
        worst = max(worst, gap)
    if not p.exact:
        satisfied = worst <= tol
    return FinnerReport(satisfied, worst)


def finner_s111_bound(n_outcomes: int) -> float:
    if n_outcomes < 1:
        raise ValidationError("need at least one outcome")
    return 1 / math.sqrt(n_outcomes)


def distance(p: OutcomeDistribution, q: OutcomeDistribution) -> float:
    """Euclidean norm of ``p - q`` over all ``N^3`` entries."""
    if p.n_outcomes != q.n_outcomes:
        raise ValidationError("distributions have different numbers of outcomes")
    diff = p.probs.astype(np.float64) - q.probs.astype(np.float64)
    return float(np.sqrt(np.sum(diff * diff)))


def from_entries(n: int, entries: Iterable[tuple[tuple[int, int, int], object]]) -> OutcomeDistribution:
    """Exact distribution from ``((a, b, c), p)`` pairs with 1-based outcomes."""
    arr = np.full((n, n, n), Fraction(0), dtype=object)
    for (a, b, c), value in entries:
        arr[a - 1, b - 1, c - 1] += to_fraction(value)
    return OutcomeDistribution(arr)
