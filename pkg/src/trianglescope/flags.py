"""Piecewise-constant response functions ("flags") and their exact evaluation.

A flag assigns to every rectangle of a grid over ``[0,1]^2`` a probability
vector over the outcomes.  The three flags of a model are wired as

* Alice reads ``(beta, gamma)``,
* Bob reads ``(gamma, alpha)``,
* Charlie reads ``(alpha, beta)``,

with the first source on the x axis.  Intervals are half-open
``[x_i, x_{i+1})`` except the last, which is closed.
"""

from __future__ import annotations

import bisect
import itertools
import json
import math
from dataclasses import dataclass
from fractions import Fraction
from functools import reduce
from typing import Callable, Sequence

import numpy as np

from .dist_core import (
    MAX_OUTCOMES,
    OutcomeDistribution,
    ValidationError,
    to_fraction,
)

AXES = ("alpha", "beta", "gamma")
PARTY_AXES = {
    "alice": ("beta", "gamma"),
    "bob": ("gamma", "alpha"),
    "charlie": ("alpha", "beta"),
}
MAX_INTERVALS = 10_000

ZERO = Fraction(0)
ONE = Fraction(1)


def _as_breaks(breaks) -> tuple[Fraction, ...]:
    out = tuple(to_fraction(b) for b in breaks)
    if len(out) < 2 or out[0] != 0 or out[-1] != 1:
        raise ValidationError(f"breaks must start at 0 and end at 1, got {[str(b) for b in out]}")
    if any(b1 <= b0 for b0, b1 in zip(out, out[1:])):
        raise ValidationError("breaks must be strictly increasing")
    if len(out) - 1 > MAX_INTERVALS:
        raise ValidationError(f"more than {MAX_INTERVALS} intervals on one axis")
    return out


def unit_vector(n: int, outcome: int) -> tuple[Fraction, ...]:
    """Deterministic cell for a 1-based outcome."""
    return tuple(ONE if k == outcome - 1 else ZERO for k in range(n))


def prob_vector(values) -> tuple[Fraction, ...]:
    return tuple(to_fraction(v) for v in values)


@dataclass(frozen=True, eq=False)
class Flag:
    """Response function of one party on a rectangular grid."""

    n_outcomes: int
    x_axis: str
    y_axis: str
    x_breaks: tuple
    y_breaks: tuple
    cells: np.ndarray  # object array, shape (nx, ny, N), exact fractions

    def __post_init__(self):
        if self.x_axis not in AXES or self.y_axis not in AXES:
            raise ValidationError(f"unknown source axis in ({self.x_axis}, {self.y_axis})")
        if self.x_axis == self.y_axis:
            raise ValidationError("a flag needs two distinct source axes")
        n = int(self.n_outcomes)
        if not 1 <= n <= MAX_OUTCOMES:
            raise ValidationError(f"number of outcomes must be in 1..{MAX_OUTCOMES}")
        xb, yb = _as_breaks(self.x_breaks), _as_breaks(self.y_breaks)
        cells = np.asarray(self.cells, dtype=object)
        if cells.shape != (len(xb) - 1, len(yb) - 1, n):
            raise ValidationError(
                f"cells have shape {cells.shape}, expected {(len(xb) - 1, len(yb) - 1, n)}")
        if not all(type(v) is Fraction for v in cells.flat):
            cells = np.vectorize(to_fraction, otypes=[object])(cells)
        else:
            cells = cells.copy()
        for vec in cells.reshape(-1, n):
            if any(v < 0 for v in vec) or sum(vec, ZERO) != 1:
                raise ValidationError(f"cell {[str(v) for v in vec]} is not a probability vector")
        cells.flags.writeable = False
        object.__setattr__(self, "n_outcomes", n)
        object.__setattr__(self, "x_breaks", xb)
        object.__setattr__(self, "y_breaks", yb)
        object.__setattr__(self, "cells", cells)

    @classmethod
    def from_function(cls, n_outcomes, x_axis, y_axis, x_breaks, y_breaks,
                      cell: Callable[[int, int], Sequence]) -> "Flag":
        """Build a flag from ``cell(i, j)`` giving the vector of interval pair ``(i, j)``."""
        nx, ny = len(x_breaks) - 1, len(y_breaks) - 1
        cells = np.empty((nx, ny, n_outcomes), dtype=object)
        for i in range(nx):
            for j in range(ny):
                cells[i, j, :] = list(prob_vector(cell(i, j)))
        return cls(n_outcomes, x_axis, y_axis, tuple(x_breaks), tuple(y_breaks), cells)

    @classmethod
    def _trusted(cls, n_outcomes, x_axis, y_axis, x_breaks, y_breaks, cells) -> "Flag":
        # Used for flags assembled from already validated pieces.
        flag = object.__new__(cls)
        cells = np.array(cells, dtype=object)
        cells.flags.writeable = False
        for name, value in (("n_outcomes", n_outcomes), ("x_axis", x_axis), ("y_axis", y_axis),
                            ("x_breaks", tuple(x_breaks)), ("y_breaks", tuple(y_breaks)),
                            ("cells", cells)):
            object.__setattr__(flag, name, value)
        return flag

    @classmethod
    def constant(cls, n_outcomes, x_axis, y_axis, vector) -> "Flag":
        return cls.from_function(n_outcomes, x_axis, y_axis, (0, 1), (0, 1), lambda i, j: vector)

    @property
    def shape(self) -> tuple[int, int]:
        return self.cells.shape[0], self.cells.shape[1]

    def cell_at(self, x, y) -> tuple[Fraction, ...]:
        """Probability vector at the point ``(x, y)``."""
        i = _locate(self.x_breaks, to_fraction(x))
        j = _locate(self.y_breaks, to_fraction(y))
        return tuple(self.cells[i, j])

    def refined(self, x_breaks, y_breaks) -> np.ndarray:
        """Cell array resampled on finer breaks containing the current ones."""
        return self.cells[np.ix_(_refine_index(self.x_breaks, x_breaks),
                                 _refine_index(self.y_breaks, y_breaks))]

    def relabeled(self, perm: Sequence[int]) -> "Flag":
        """Flag whose output ``perm[a]`` carries the old mass of ``a`` (0-based)."""
        cells = np.empty_like(self.cells)
        for a, b in enumerate(perm):
            cells[:, :, b] = self.cells[:, :, a]
        return Flag(self.n_outcomes, self.x_axis, self.y_axis, self.x_breaks, self.y_breaks, cells)

    def is_deterministic(self) -> bool:
        return all(v in (0, 1) for v in self.cells.flat)

    def to_json(self) -> dict:
        return {
            "x_axis": self.x_axis,
            "y_axis": self.y_axis,
            "x_breaks": [str(b) for b in self.x_breaks],
            "y_breaks": [str(b) for b in self.y_breaks],
            "cells": [[[str(v) for v in self.cells[i, j]] for j in range(self.shape[1])]
                      for i in range(self.shape[0])],
        }

    @classmethod
    def from_json(cls, n_outcomes: int, data: dict) -> "Flag":
        try:
            cells = np.array(data["cells"], dtype=object)
            return cls(n_outcomes, data["x_axis"], data["y_axis"],
                       tuple(data["x_breaks"]), tuple(data["y_breaks"]), cells)
        except (KeyError, TypeError, ValueError, ZeroDivisionError) as exc:
            if isinstance(exc, ValidationError):
                raise
            raise ValidationError(f"malformed flag JSON: {exc}") from exc


def _refine_index(coarse, fine) -> list[int]:
    """Index of the coarse interval containing each fine interval."""
    out, i, last = [], 0, len(coarse) - 2
    for b in fine[:-1]:
        while i < last and coarse[i + 1] <= b:
            i += 1
        out.append(i)
    return out


def _locate(breaks, x) -> int:
    if x < 0 or x > 1:
        raise ValidationError(f"point {x} outside [0,1]")
    return min(bisect.bisect_right(breaks, x) - 1, len(breaks) - 2)


@dataclass(frozen=True, eq=False)
class FlagModel:
    """Three flags wired according to the triangle network."""

    alice: Flag
    bob: Flag
    charlie: Flag

    def __post_init__(self):
        for name in PARTY_AXES:
            flag = getattr(self, name)
            if (flag.x_axis, flag.y_axis) != PARTY_AXES[name]:
                raise ValidationError(
                    f"{name} must read {PARTY_AXES[name]}, got {(flag.x_axis, flag.y_axis)}")
        if len({self.alice.n_outcomes, self.bob.n_outcomes, self.charlie.n_outcomes}) != 1:
            raise ValidationError("flags disagree on the number of outcomes")

    @property
    def n_outcomes(self) -> int:
        return self.alice.n_outcomes

    def parties(self):
        return (self.alice, self.bob, self.charlie)

    def to_json(self) -> dict:
        return {"n_outcomes": self.n_outcomes,
                "flags": {name: getattr(self, name).to_json() for name in PARTY_AXES}}

    @classmethod
    def from_json(cls, data: dict) -> "FlagModel":
        try:
            n = int(data["n_outcomes"])
            flags = data["flags"]
            return cls(*(Flag.from_json(n, flags[name]) for name in PARTY_AXES))
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ValidationError):
                raise
            raise ValidationError(f"malformed flag model JSON: {exc}") from exc

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=1)


def load_flags(path) -> FlagModel:
    with open(path) as fh:
        return FlagModel.from_json(json.load(fh))


def save_flags(model: FlagModel, path) -> None:
    with open(path, "w") as fh:
        fh.write(model.dumps())


# ---------------------------------------------------------------------------
# exact evaluation


def _lcm(values) -> int:
    return reduce(math.lcm, values, 1)


def _scaled(values: np.ndarray) -> tuple[np.ndarray, int]:
    """Integer array ``m`` and denominator ``d`` with ``values == m / d``."""
    d = _lcm(v.denominator for v in values.flat)
    ints = np.empty(values.shape, dtype=object)
    ints.flat[:] = [v.numerator * (d // v.denominator) for v in values.flat]
    return ints, d


def refine_axes(model: FlagModel) -> dict[str, tuple[Fraction, ...]]:
    """Union of the breakpoints of both flags reading each source."""
    found = {axis: set() for axis in AXES}
    for flag in model.parties():
        found[flag.x_axis].update(flag.x_breaks)
        found[flag.y_axis].update(flag.y_breaks)
    return {axis: tuple(sorted(v)) for axis, v in found.items()}


def evaluate(model: FlagModel) -> OutcomeDistribution:
    """Exact distribution of a flag model.

    Every source axis is cut at all breakpoints used on it, which makes all
    three flags constant on each refined box.  The contraction
    ``sum len(a) len(b) len(g) qA(.|b,g) qB(.|g,a) qC(.|a,b)`` is then
    carried out on integers after clearing denominators.
    """
    breaks = refine_axes(model)
    widths = {}
    for axis, br in breaks.items():
        w = np.array([b1 - b0 for b0, b1 in zip(br, br[1:])], dtype=object)
        widths[axis] = _scaled(w)

    tensors = []
    for flag in model.parties():
        cells = flag.refined(breaks[flag.x_axis], breaks[flag.y_axis])
        tensors.append(_scaled(cells))
    (qa, da), (qb, db), (qc, dc) = tensors
    (wa, la), (wb, lb), (wg, lg) = widths["alpha"], widths["beta"], widths["gamma"]

    bound = la * lb * lg * da * db * dc
    dtype = np.int64 if bound < 2 ** 62 else object
    qa, qb, qc = qa.astype(dtype), qb.astype(dtype), qc.astype(dtype)
    wa, wb, wg = wa.astype(dtype), wb.astype(dtype), wg.astype(dtype)
    # qa[beta, gamma, a], qb[gamma, alpha, b], qc[alpha, beta, c]
    ab = np.einsum("g,bgi,gaj->baij", wg, qa, qb)
    ab = ab * wb[:, None, None, None] * wa[None, :, None, None]
    counts = np.einsum("baij,abk->ijk", ab, qc)
    probs = np.empty(counts.shape, dtype=object)
    probs.flat[:] = [Fraction(int(c), bound) for c in counts.flat]
    return OutcomeDistribution(probs)


# ---------------------------------------------------------------------------
# outcome-symmetric generation


def transposition(n: int, j: int) -> tuple[int, ...]:
    """0-based image table of the swap of outcomes 1 and ``j`` (1-based)."""
    perm = list(range(n))
    perm[0], perm[j - 1] = perm[j - 1], perm[0]
    return tuple(perm)


def block_permutation(n: int, j: int, k: int) -> tuple[int, ...]:
    """0-based image table of a permutation sending 1 to ``j`` and 2 to ``k``.

    The remaining outcomes are filled in increasing order; the seeds are
    invariant under any choice on them.
    """
    rest = [a for a in range(n) if a not in (j - 1, k - 1)]
    return tuple([j - 1, k - 1] + rest)


@dataclass(frozen=True)
class SubResponseSpec:
    """Seeds of an outcome-symmetric flag: diagonal block and block (1, 2)."""

    q11: Flag
    q12: Flag
    n_outcomes: int

    def __post_init__(self):
        for seed in (self.q11, self.q12):
            if seed.n_outcomes != self.n_outcomes:
                raise ValidationError("seed flags disagree with the number of outcomes")
        if (self.q11.x_axis, self.q11.y_axis) != (self.q12.x_axis, self.q12.y_axis):
            raise ValidationError("seed flags must read the same sources")
        if self.n_outcomes < 2:
            raise ValidationError("need at least two outcomes")

    def constraint_violations(self) -> list[str]:
        problems = []
        for vec in self.q11.cells.reshape(-1, self.n_outcomes):
            if len(set(vec[1:])) > 1:
                problems.append(f"diagonal seed cell {[str(v) for v in vec]} favours an outcome other than 1")
        for vec in self.q12.cells.reshape(-1, self.n_outcomes):
            if len(set(vec[2:])) > 1:
                problems.append(f"off-diagonal seed cell {[str(v) for v in vec]} favours an outcome above 2")
        return problems


def _permute_vector(vec, perm) -> list:
    out = [None] * len(vec)
    for a, b in enumerate(perm):
        out[b] = vec[a]
    return out


def assemble_blocks(n: int, block_flag: Callable[[int, int], tuple[Flag, Sequence[int]]],
                    x_axis: str, y_axis: str) -> Flag:
    """Tile ``[0,1]^2`` by ``n x n`` blocks.

    ``block_flag(j, k)`` returns a unit-square flag and a 0-based outcome
    permutation; block ``(j, k)`` (1-based) shows that flag with outcome
    ``a`` moved to ``perm[a]``.
    """
    blocks = {(j, k): block_flag(j, k) for j in range(1, n + 1) for k in range(1, n + 1)}

    def union(seeds, attr):
        distinct = {id(s): getattr(s, attr) for s in seeds}
        return sorted(set().union(*distinct.values()))

    local_x = [union((blocks[j, k][0] for k in range(1, n + 1)), "x_breaks") for j in range(1, n + 1)]
    local_y = [union((blocks[j, k][0] for j in range(1, n + 1)), "y_breaks") for k in range(1, n + 1)]
    interned: dict[tuple, int] = {}
    x_pattern = [interned.setdefault(tuple(b), len(interned)) for b in local_x]
    y_pattern = [interned.setdefault(tuple(b), len(interned)) for b in local_y]
    resampled = {}  # seeds repeat across blocks; resample each once per break pattern
    rows = []
    for j in range(1, n + 1):
        row = []
        for k in range(1, n + 1):
            seed, perm = blocks[j, k]
            key = (id(seed), x_pattern[j - 1], y_pattern[k - 1])
            if key not in resampled:
                resampled[key] = seed.refined(local_x[j - 1], local_y[k - 1])
            row.append(resampled[key][:, :, np.argsort(perm)])
        rows.append(np.concatenate(row, axis=1))
    cells = np.concatenate(rows, axis=0)
    x_breaks = [ZERO] + [(j + b) / n for j in range(n) for b in local_x[j][1:]]
    y_breaks = [ZERO] + [(k + b) / n for k in range(n) for b in local_y[k][1:]]
    return Flag._trusted(n, x_axis, y_axis, x_breaks, y_breaks, cells)


def generate_outcome_symmetric(spec: SubResponseSpec) -> Flag:
    """Block flag from its seeds, covariant under joint outcome relabeling.

    Diagonal block ``(j, j)`` is the diagonal seed with outcomes 1 and ``j``
    swapped; block ``(j, k)`` is the off-diagonal seed with 1 sent to ``j``
    and 2 sent to ``k``.
    """
    problems = spec.constraint_violations()
    if problems:
        raise ValidationError("; ".join(problems[:3]))
    n = spec.n_outcomes

    def block(j, k):
        if j == k:
            return spec.q11, transposition(n, j)
        return spec.q12, block_permutation(n, j, k)

    return assemble_blocks(n, block, spec.q11.x_axis, spec.q11.y_axis)


def _block_profile(flag: Flag, j: int, k: int) -> dict[tuple, Fraction]:
    """Area (relative to the block) carried by each cell vector of block (j, k)."""
    n = flag.n_outcomes
    lo_x, hi_x = Fraction(j - 1, n), Fraction(j, n)
    lo_y, hi_y = Fraction(k - 1, n), Fraction(k, n)
    profile: dict[tuple, Fraction] = {}
    for i in range(flag.shape[0]):
        x0, x1 = flag.x_breaks[i], flag.x_breaks[i + 1]
        if x0 < lo_x or x1 > hi_x:
            continue
        for m in range(flag.shape[1]):
            y0, y1 = flag.y_breaks[m], flag.y_breaks[m + 1]
            if y0 < lo_y or y1 > hi_y:
                continue
            key = tuple(flag.cells[i, m])
            profile[key] = profile.get(key, ZERO) + (x1 - x0) * (y1 - y0) * n * n
    return profile


def check_outcome_covariance(flag: Flag) -> bool:
    """Whether relabeling outcomes by any permutation maps blocks onto blocks.

    Block ``(s(j), s(k))`` must carry, for each vector ``v`` of block
    ``(j, k)``, the relabeled vector ``v o s^-1`` on the same total area.
    Blocks are compared as area profiles, i.e. up to measure-preserving
    rearrangement inside the block.  Flags whose breaks miss the block grid
    are refined onto it first.  It suffices to test a generating set of the
    symmetric group.
    """
    n = flag.n_outcomes
    grid = {Fraction(j, n) for j in range(n + 1)}
    if not (grid <= set(flag.x_breaks) and grid <= set(flag.y_breaks)):
        xb = tuple(sorted(grid | set(flag.x_breaks)))
        yb = tuple(sorted(grid | set(flag.y_breaks)))
        flag = Flag._trusted(n, flag.x_axis, flag.y_axis, xb, yb, flag.refined(xb, yb))
    profiles = {(j, k): _block_profile(flag, j, k)
                for j in range(1, n + 1) for k in range(1, n + 1)}
    generators = [tuple([1, 0] + list(range(2, n))), tuple(list(range(1, n)) + [0])]
    for perm in generators:
        for (j, k), profile in profiles.items():
            target = profiles[perm[j - 1] + 1, perm[k - 1] + 1]
            moved: dict[tuple, Fraction] = {}
            for vec, area in profile.items():
                key = tuple(_permute_vector(vec, perm))
                moved[key] = moved.get(key, ZERO) + area
            if moved != target:
                return False
    return True


# ---------------------------------------------------------------------------
# named constructions


def _check_range(name, value, lo, hi):
    value = to_fraction(value)
    if not lo <= value <= hi:
        raise ValidationError(f"{name}={value} outside [{lo}, {hi}]")
    return value


def _stripes(n, x_axis, y_axis, axis, cuts, vectors) -> Flag:
    """Unit flag constant along one axis, cut at ``cuts`` along the other."""
    breaks = (ZERO,) + tuple(to_fraction(c) for c in cuts) + (ONE,)
    keep = [i for i in range(len(breaks) - 1) if breaks[i + 1] > breaks[i]]
    br = tuple(breaks[i] for i in keep) + (ONE,)
    vecs = [vectors[i] for i in keep]
    if axis == "x":
        return Flag.from_function(n, x_axis, y_axis, br, (0, 1), lambda i, j: vecs[i])
    return Flag.from_function(n, x_axis, y_axis, (0, 1), br, lambda i, j: vecs[j])


def constant_flags(n_outcomes: int, outcome: int = 1) -> FlagModel:
    vec = unit_vector(n_outcomes, outcome)
    return FlagModel(*(Flag.constant(n_outcomes, *PARTY_AXES[p], vec) for p in PARTY_AXES))


def squares_flags() -> FlagModel:
    """Four outcomes from one bit per source; half the mass is on ``a=b=c``."""
    half = (0, Fraction(1, 2), 1)

    def table(mapping):
        return lambda i, j: unit_vector(4, mapping[i, j])

    alice = Flag.from_function(4, "beta", "gamma", half, half,
                               table({(0, 0): 1, (0, 1): 3, (1, 0): 4, (1, 1): 2}))
    bob = Flag.from_function(4, "gamma", "alpha", half, half,
                             table({(0, 0): 1, (0, 1): 4, (1, 0): 2, (1, 1): 3}))
    charlie = Flag.from_function(4, "alpha", "beta", half, half,
                                 table({(0, 0): 1, (0, 1): 2, (1, 0): 3, (1, 1): 4}))
    return FlagModel(alice, bob, charlie)


def _correlating_bob(n, nu) -> Flag:
    # Bob follows the gamma block when gamma lies in the first nu of its
    # block, otherwise the alpha block.
    diag = Flag.constant(n, "gamma", "alpha", unit_vector(n, 1))
    off = _stripes(n, "gamma", "alpha", "x", [nu], [unit_vector(n, 1), unit_vector(n, 2)])
    return generate_outcome_symmetric(SubResponseSpec(diag, off, n))


def _charlie_blocks(n, diag_vec, off_vec) -> Flag:
    diag = Flag.constant(n, "alpha", "beta", diag_vec)
    off = Flag.constant(n, "alpha", "beta", off_vec)
    return generate_outcome_symmetric(SubResponseSpec(diag, off, n))


def n_outcome_flags(n_outcomes: int, nu) -> FlagModel:
    """Maximally correlated block flags for ``N >= 3`` outcomes.

    All three parties output ``k`` when every source sits in block ``k``.
    Alice and Bob agree on the gamma block with probability ``nu`` per
    off-diagonal block; Charlie splits ``q = nu/(1-nu)`` between the two
    block labels he sees.
    """
    n = int(n_outcomes)
    if not 3 <= n <= MAX_OUTCOMES:
        raise ValidationError(f"need 3..{MAX_OUTCOMES} outcomes")
    nu = _check_range("nu", nu, 0, Fraction(1, 3))
    q = nu / (1 - nu)
    diag = Flag.constant(n, "beta", "gamma", unit_vector(n, 1))
    off = _stripes(n, "beta", "gamma", "y", [nu], [unit_vector(n, 2), unit_vector(n, 1)])
    alice = generate_outcome_symmetric(SubResponseSpec(diag, off, n))
    rest = (1 - 2 * q) / (n - 2)
    charlie = _charlie_blocks(n, unit_vector(n, 1), [q, q] + [rest] * (n - 2))
    return FlagModel(alice, _correlating_bob(n, nu), charlie)


def maxcorr_flags(nu) -> FlagModel:
    """Four-outcome maximally correlated flags, ``s111 = 1/4`` for every nu."""
    return n_outcome_flags(4, nu)


def general_q(r, eta, nu) -> Fraction:
    r, eta, nu = to_fraction(r), to_fraction(eta), to_fraction(nu)
    return (1 - r) / 3 + nu / (1 - nu) * (4 * eta - 1) / 3


def general_flags(r, eta, nu) -> FlagModel:
    """Three-parameter family interpolating the maximally correlated flags.

    Inside the correlating stripe of width ``nu`` Alice follows the gamma
    block for a fraction ``eta`` and otherwise outputs a uniformly random
    other outcome; Charlie keeps his block label with weight ``r`` on the
    diagonal and splits ``q`` / ``1/2 - q`` off the diagonal.
    """
    r = _check_range("r", r, 0, 1)
    eta = _check_range("eta", eta, 0, 1)
    nu = _check_range("nu", nu, 0, Fraction(1, 2))
    q = general_q(r, eta, nu)
    if not 0 <= q <= Fraction(1, 2):
        raise ValidationError(f"derived q={q} outside [0, 1/2]")
    n = 4
    third = Fraction(1, 3)
    cut = [eta * nu, nu]
    diag = _stripes(n, "beta", "gamma", "y", cut,
                    [unit_vector(n, 1), (0, third, third, third), unit_vector(n, 1)])
    off = _stripes(n, "beta", "gamma", "y", cut,
                   [unit_vector(n, 2), (third, 0, third, third), unit_vector(n, 1)])
    alice = generate_outcome_symmetric(SubResponseSpec(diag, off, n))
    half_rest = Fraction(1, 2) - q
    charlie = _charlie_blocks(n, [r] + [(1 - r) / 3] * 3, [q, q, half_rest, half_rest])
    return FlagModel(alice, _correlating_bob(n, nu), charlie)


def anticorr_flags(r) -> FlagModel:
    """Flags that avoid ``a=b=c`` almost entirely.

    Off the diagonal every party outputs the block label of its second
    source.  When both of its sources share block ``k`` a party answers
    with one of the three other outcomes: Alice by stripes of beta, Bob by
    stripes of alpha, and Charlie, who sees both stripes, copies agreeing
    colours (or picks the missing third colour) with probability ``r``.
    """
    r = _check_range("r", r, 0, 1)
    n = 4
    third = Fraction(1, 3)
    cuts = [third, 2 * third]
    colours = (2, 3, 4)
    stripe_vecs = [unit_vector(n, c) for c in colours]
    alice_diag = _stripes(n, "beta", "gamma", "x", cuts, stripe_vecs)
    bob_diag = _stripes(n, "gamma", "alpha", "y", cuts, stripe_vecs)

    def charlie_cell(s, t):
        # s: Bob's stripe (alpha), t: Alice's stripe (beta)
        bob_c, alice_c = colours[s], colours[t]
        vec = [ZERO] * n
        if bob_c == alice_c:
            vec[bob_c - 1] = r
            for c in colours:
                if c != bob_c:
                    vec[c - 1] = (1 - r) / 2
        else:
            third_c = next(c for c in colours if c not in (bob_c, alice_c))
            vec[third_c - 1] = r
            vec[bob_c - 1] = (1 - r) / 2
            vec[alice_c - 1] = (1 - r) / 2
        return vec

    grid = (0, third, 2 * third, 1)
    charlie_diag = Flag.from_function(n, "alpha", "beta", grid, grid, charlie_cell)

    def party(diag, x_axis, y_axis):
        off = Flag.constant(n, x_axis, y_axis, unit_vector(n, 2))

        def block(j, k):
            if j == k:
                return diag, transposition(n, j)
            return off, block_permutation(n, j, k)

        return assemble_blocks(n, block, x_axis, y_axis)

    return FlagModel(party(alice_diag, "beta", "gamma"),
                     party(bob_diag, "gamma", "alpha"),
                     party(charlie_diag, "alpha", "beta"))


# One table shared by all parties, read as (first source, second source).
# Rows index the first source in quarters, columns the second.
PAIR_MARGINAL_TABLE = (
    (1, 2, 1, 1),
    (2, 2, 3, 4),
    (3, 3, 3, 4),
    (1, 2, 4, 4),
)


def table_flags(table, weights=None, n_outcomes=None) -> FlagModel:
    """Cyclic model where every party applies the same deterministic table.

    ``weights`` are the interval lengths of the (common) source alphabet;
    uniform if omitted.
    """
    size = len(table)
    if weights is None:
        weights = [Fraction(1, size)] * size
    weights = [to_fraction(w) for w in weights]
    breaks = [ZERO]
    for w in weights:
        breaks.append(breaks[-1] + w)
    n = n_outcomes or max(max(row) for row in table)

    def make(x_axis, y_axis):
        return Flag.from_function(n, x_axis, y_axis, breaks, breaks,
                                  lambda i, j: unit_vector(n, table[i][j]))

    return FlagModel(*(make(*PARTY_AXES[p]) for p in PARTY_AXES))


def two_party_marginal_flags() -> FlagModel:
    """Deterministic cyclic flags whose pair marginals are 7/64 and 3/64.

    The triple agreement is only ``p(A=B=C=k) = 1/16`` and the
    distribution is invariant under cyclic shifts of the parties but not
    under outcome relabelings.
    """
    return table_flags(PAIR_MARGINAL_TABLE)


def _cumulative(weights):
    out = [ZERO]
    for w in weights:
        out.append(out[-1] + w)
    return out


def step_flags(n_outcomes: int, weights: dict, tables: dict) -> FlagModel:
    """Embed finite source alphabets as intervals of ``[0,1]``.

    ``weights`` maps each source to its symbol probabilities, ``tables``
    maps each party to a nested list ``table[x_symbol][y_symbol]`` holding
    either an outcome (1-based int) or a probability vector.  Symbols of
    zero weight are dropped since they carry no mass.
    """
    weights = {axis: [to_fraction(w) for w in weights[axis]] for axis in AXES}
    kept = {axis: [i for i, w in enumerate(ws) if w > 0] for axis, ws in weights.items()}
    breaks = {axis: _cumulative([weights[axis][i] for i in kept[axis]]) for axis in AXES}
    for axis in AXES:
        if breaks[axis][-1] != 1:
            raise ValidationError(f"weights of source {axis} do not sum to 1")

    def make(party):
        x_axis, y_axis = PARTY_AXES[party]
        table = tables[party]

        def cell(i, j):
            entry = table[kept[x_axis][i]][kept[y_axis][j]]
            if isinstance(entry, (int, np.integer)):
                return unit_vector(n_outcomes, int(entry))
            return entry

        return Flag.from_function(n_outcomes, x_axis, y_axis, breaks[x_axis], breaks[y_axis], cell)

    return FlagModel(*(make(p) for p in PARTY_AXES))


def latin_square_tables():
    """Response tables of the three-outcome strategy without ``a=b!=c`` events.

    With colours in ``Z_3`` Alice answers ``beta + gamma``, Bob
    ``alpha - gamma`` and Charlie ``-alpha - beta``.  The three answers
    sum to zero, which for three colours means all equal or all distinct.
    """
    alice = [[(j + k) % 3 + 1 for k in range(3)] for j in range(3)]
    bob = [[(i - k) % 3 + 1 for i in range(3)] for k in range(3)]
    charlie = [[(-i - j) % 3 + 1 for j in range(3)] for i in range(3)]
    return {"alice": alice, "bob": bob, "charlie": charlie}


def latin_square_flags(p_alpha) -> FlagModel:
    """Three-outcome strategy with ``s112 = 0`` for any weights on alpha."""
    p_alpha = [to_fraction(w) for w in p_alpha]
    if len(p_alpha) != 3 or any(w < 0 for w in p_alpha) or sum(p_alpha) != 1:
        raise ValidationError("p_alpha must be a probability 3-vector")
    third = Fraction(1, 3)
    return step_flags(3, {"alpha": p_alpha, "beta": [third] * 3, "gamma": [third] * 3},
                      latin_square_tables())


# Responses of the three-outcome counterexample, indexed by
# (class of x symbol, colour offset t - s, class of y symbol).  Entries
# are probability vectors over colours relative to the x symbol's colour.
_COUNTEREXAMPLE_RESPONSES = {
    (0, 0, 0): (1, 0, 0),
    (0, 0, 1): (Fraction(4112, 4155), 0, Fraction(43, 4155)),
    (0, 1, 0): (0, 1, 0),
    (0, 1, 1): (Fraction(10721, 12465), Fraction(926, 7479), Fraction(602, 37395)),
    (0, 2, 0): (1, 0, 0),
    (0, 2, 1): (0, 1, 0),
    (1, 0, 0): (1, 0, 0),
    (1, 0, 1): (1, 0, 0),
    (1, 1, 0): (0, 0, 1),
    (1, 1, 1): (1, 0, 0),
    (1, 2, 0): (0, 0, 1),
    (1, 2, 1): (0, 0, 1),
}
_COUNTEREXAMPLE_CLASS_WEIGHT = Fraction(5, 14)


def three_outcome_counterexample_tables():
    """Shared response table over six symbols ``(class, colour)``.

    The table commutes with a cyclic shift of all colours, and the same
    table serves every party, so the distribution is invariant under cyclic
    party and outcome relabelling.  The class-0 entries with (t - s) = 0, 1, 2
    and y in class 1 are the only non-deterministic responses.
    """
    symbols = [(i, s) for i in range(2) for s in range(3)]

    def response(x, y):
        (i, s), (j, t) = x, y
        rel = prob_vector(_COUNTEREXAMPLE_RESPONSES[(i, (t - s) % 3, j)])
        return tuple(rel[(o - s) % 3] for o in range(3))

    table = [[response(x, y) for y in symbols] for x in symbols]
    return {party: table for party in PARTY_AXES}


def three_outcome_counterexample_flags() -> FlagModel:
    """Fully symmetric three-outcome local model at ``(7/18, 7/18, 2/9)``.

    Its ``s111 = 7/18`` exceeds the ``1/3`` reached by the Latin-square
    strategy, so that strategy is not optimal once ``s112 > 0``.
    """
    u = _COUNTEREXAMPLE_CLASS_WEIGHT
    w = [u / 3] * 3 + [(1 - u) / 3] * 3
    return step_flags(3, {axis: w for axis in AXES}, three_outcome_counterexample_tables())


def near_symmetric_witness_flags() -> FlagModel:
    """Deterministic four-outcome flags on a 20 x 20 grid close to the symmetric subspace.

    Evaluates exactly to ``s111 = 2341/8000`` with ``Delta_1 = 497/32000``.
    The grid was found by optimising softmax flags for ``s111`` under a
    symmetry penalty and polishing the rounded tables by single-cell flips.
    """
    from importlib.resources import files

    data = json.loads(files("trianglescope").joinpath("data/near_symmetric_witness.json").read_text())
    return FlagModel.from_json(data)
