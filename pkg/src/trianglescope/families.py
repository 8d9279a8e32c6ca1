"""Closed-form families of symmetric local points and the assembled region.

Besides the analytic lines, this module implements the decorrelation
current: a map that sends any fully symmetric local point towards more
mixed points while staying local, both in closed form and as an explicit
sampled model built on top of a flag model.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable

import numpy as np
import shapely
from scipy.spatial import cKDTree
from shapely.geometry import MultiPoint, Point, Polygon

from .dist_core import (
    OutcomeDistribution,
    SymCoords,
    TernaryPoint,
    ValidationError,
    from_ternary,
    is_fully_symmetric,
    sym_coords,
    ternary_point,
    to_fraction,
)
from .flags import FlagModel, evaluate, general_q


def _num(value, exact):
    return to_fraction(value) if exact else float(value)


def _is_exact(*values) -> bool:
    return all(isinstance(v, (int, Fraction, str)) for v in values)


@dataclass(frozen=True)
class FamilyParams:
    r: object
    eta: object
    nu: object

    def __post_init__(self):
        for name in ("r", "eta"):
            if not 0 <= getattr(self, name) <= 1:
                raise ValidationError(f"{name} outside [0, 1]")
        if not 0 <= self.nu <= Fraction(1, 2):
            raise ValidationError("nu outside [0, 1/2]")
        q = self.q
        if not 0 <= q <= Fraction(1, 2):
            raise ValidationError(f"derived q={q} outside [0, 1/2]")

    @property
    def q(self):
        if _is_exact(self.r, self.eta, self.nu):
            return general_q(self.r, self.eta, self.nu)
        r, eta, nu = float(self.r), float(self.eta), float(self.nu)
        return (1 - r) / 3 + nu / (1 - nu) * (4 * eta - 1) / 3


def is_valid_params(r, eta, nu, tol=0.0) -> bool:
    if not (0 <= r <= 1 and 0 <= eta <= 1 and 0 <= nu <= 0.5):
        return False
    q = (1 - r) / 3 + nu / (1 - nu) * (4 * eta - 1) / 3
    return -tol <= q <= 0.5 + tol


def general_family(params: FamilyParams) -> SymCoords:
    r, eta, nu = params.r, params.eta, params.nu
    if _is_exact(r, eta, nu):
        r, eta, nu = to_fraction(r), to_fraction(eta), to_fraction(nu)
    s111 = ((1 - nu) * r + eta * nu) / 4
    s112 = 3 * ((1 - nu) * (1 - r) + 3 * eta * nu) / 4
    s123 = (1 + 2 * (1 - nu) * r + (3 - 10 * eta) * nu) / 4
    return SymCoords(s111, s112, s123)


@dataclass(frozen=True)
class TableLine:
    """A segment of the general family obtained by fixing some parameters."""

    label: str
    constraint: str
    params: Callable[[object], FamilyParams]

    def at(self, t) -> SymCoords:
        """Point at ``t`` in [0, 1]; ``t=0`` and ``t=1`` are the listed endpoints."""
        return general_family(self.params(to_fraction(t) if _is_exact(t) else t))

    @property
    def start(self) -> SymCoords:
        return self.at(0)

    @property
    def end(self) -> SymCoords:
        return self.at(1)


def _lerp(a, b, t):
    return a + (b - a) * t


def table_lines() -> list[TableLine]:
    third, seventh, half = Fraction(1, 3), Fraction(1, 7), Fraction(1, 2)

    def red(t):
        nu = _lerp(seventh, third, t)
        return FamilyParams((7 * nu - 1) / (2 * (1 - nu)), 1, nu)

    def green(t):
        nu = _lerp(half, 0, t)
        return FamilyParams((1 - 2 * nu) / (1 - nu), 0, nu)

    return [
        TableLine("purple", "eta=1, r=1", lambda t: FamilyParams(1, 1, _lerp(third, 0, t))),
        TableLine("red", "eta=1, r=(7nu-1)/(2(1-nu))", red),
        TableLine("grey", "eta=1, r=0", lambda t: FamilyParams(0, 1, _lerp(0, seventh, t))),
        TableLine("dark green", "eta=0, r=(1-2nu)/(1-nu)", green),
        TableLine("light blue", "eta=0, r=0", lambda t: FamilyParams(0, 0, _lerp(0, half, t))),
        TableLine("dark blue", "nu=0", lambda t: FamilyParams(t, 0, 0)),
    ]


def prior_local_line(t) -> SymCoords:
    """Earlier known one-parameter local family, ``t`` in ``[0, 1]``."""
    if _is_exact(t):
        t = to_fraction(t)
    if not 0 <= t <= 1:
        raise ValidationError("t outside [0, 1]")
    return SymCoords((52 + 9 * t) / 256, (180 + 9 * t) / 256, (24 - 18 * t) / 256)


gisin_line = prior_local_line  # name required by the public API


def anticorr_line(r) -> SymCoords:
    if _is_exact(r):
        r = to_fraction(r)
    if not 0 <= r <= 1:
        raise ValidationError("r outside [0, 1]")
    return SymCoords(r / 48, (4 - r) / 16, (18 + r) / 24)


# ---------------------------------------------------------------------------
# decorrelation current


@dataclass(frozen=True)
class CurrentParams:
    epsilon: object
    l: object  # noqa: E741  (weight of unequal pairs in the shared-pair distribution)

    def __post_init__(self):
        for name in ("epsilon", "l"):
            if not 0 <= getattr(self, name) <= 1:
                raise ValidationError(f"{name} outside [0, 1]")


def pair_distribution(l, n_outcomes: int = 4) -> np.ndarray:
    """Joint law of the pair of outcomes shipped with each source."""
    if n_outcomes != 4:
        raise ValidationError("the shared-pair distribution is defined for four outcomes")
    exact = _is_exact(l)
    l = _num(l, exact)
    same, other = (1 - l) / 4, l / 12
    q = np.empty((4, 4), dtype=object if exact else float)
    for a, b in itertools.product(range(4), repeat=2):
        q[a, b] = same if a == b else other
    return q


def current_flow(s0: SymCoords, params: CurrentParams) -> SymCoords:
    """Closed-form image of a symmetric local point under the current."""
    exact = _is_exact(*s0.as_tuple(), params.epsilon, params.l)
    eps, l = _num(params.epsilon, exact), _num(params.l, exact)
    s = [_num(v, exact) for v in s0.as_tuple()]
    keep = (1 - eps) ** 3
    mixed = 3 * (eps * (1 - eps) + eps ** 3 / 4)
    cube = eps ** 3
    sixtyfourth = Fraction(1, 64) if exact else 1 / 64
    return SymCoords(
        keep * s[0] + mixed * (1 - l) / 4 + cube * sixtyfourth,
        keep * s[1] + mixed * (3 - l) / 4 + 9 * cube * sixtyfourth,
        keep * s[2] + mixed * l / 2 + 6 * cube * sixtyfourth,
    )


def _float_flag(flag):
    xb = np.array([float(b) for b in flag.x_breaks])
    yb = np.array([float(b) for b in flag.y_breaks])
    cum = np.cumsum(flag.cells.astype(float), axis=2)
    return xb, yb, cum


def _sample_flag(flag_data, x, y, u):
    xb, yb, cum = flag_data
    i = np.clip(np.searchsorted(xb, x, side="right") - 1, 0, len(xb) - 2)
    j = np.clip(np.searchsorted(yb, y, side="right") - 1, 0, len(yb) - 2)
    c = cum[i, j]
    return np.minimum((c < u[:, None]).sum(axis=1), c.shape[1] - 1)


def _sample_pairs(q: np.ndarray, u: np.ndarray):
    flat = np.cumsum(q.astype(float).ravel())
    idx = np.minimum(np.searchsorted(flat, u, side="right"), flat.size - 1)
    return idx // q.shape[1], idx % q.shape[1]


@dataclass
class CurrentSample:
    distribution: OutcomeDistribution
    case_counts: dict = field(default_factory=dict)
    n_samples: int = 0


def current_model_sample(base: FlagModel, params: CurrentParams, n_samples: int, seed: int,
                         with_cases: bool = False, chunk: int = 1 << 18):
    """Sample the explicit local model realising the decorrelation current.

    Each source additionally sends a bit that is 1 with probability
    ``epsilon`` and a pair of outcomes drawn from :func:`pair_distribution`
    for the two parties it feeds.  A party seeing two zero bits follows the
    base flags; one set bit makes it output the outcome sent along that
    source; two set bits make it pick one of the two at random.
    """
    base_dist = evaluate(base)
    if not is_fully_symmetric(base_dist):
        raise ValidationError("the current requires a fully symmetric base model")
    if n_samples < 1:
        raise ValidationError("need at least one sample")
    n = base.n_outcomes
    eps = float(params.epsilon)
    q = pair_distribution(params.l, n)
    flags = [_float_flag(f) for f in base.parties()]
    rng = np.random.default_rng(seed)
    counts = np.zeros((n, n, n), dtype=np.int64)
    cases = np.zeros(8, dtype=np.int64)
    done = 0
    while done < n_samples:
        m = min(chunk, n_samples - done)
        alpha, beta, gamma = rng.random(m), rng.random(m), rng.random(m)
        x, y, z = (rng.random((3, m)) < eps)
        # pairs carried by alpha (b, c), beta (a, c), gamma (a, b)
        b_bc, c_bc = _sample_pairs(q, rng.random(m))
        a_ac, c_ac = _sample_pairs(q, rng.random(m))
        a_ab, b_ab = _sample_pairs(q, rng.random(m))
        coins = rng.random((3, m)) < 0.5
        draws = rng.random((3, m))

        a0 = _sample_flag(flags[0], beta, gamma, draws[0])
        b0 = _sample_flag(flags[1], gamma, alpha, draws[1])
        c0 = _sample_flag(flags[2], alpha, beta, draws[2])
        a = np.where(~y & ~z, a0, np.where(y & ~z, a_ac, np.where(~y & z, a_ab,
                     np.where(coins[0], a_ab, a_ac))))
        b = np.where(~x & ~z, b0, np.where(x & ~z, b_bc, np.where(~x & z, b_ab,
                     np.where(coins[1], b_ab, b_bc))))
        c = np.where(~x & ~y, c0, np.where(x & ~y, c_bc, np.where(~x & y, c_ac,
                     np.where(coins[2], c_ac, c_bc))))
        np.add.at(counts, (a, b, c), 1)
        cases += np.bincount(4 * x + 2 * y + z, minlength=8)
        done += m
    dist = OutcomeDistribution(counts / n_samples)
    if not with_cases:
        return dist
    labels = {k: tuple(int(bit) for bit in format(k, "03b")) for k in range(8)}
    return CurrentSample(dist, {labels[k]: int(cases[k]) for k in range(8)}, n_samples)


def sym_standard_errors(s: SymCoords, n_samples: int) -> tuple[float, ...]:
    """Binomial standard errors of the three class frequencies."""
    return tuple(float(np.sqrt(float(v) * (1 - float(v)) / n_samples)) for v in s.as_tuple())


# ---------------------------------------------------------------------------
# assembled region


def spike_region(grid: int) -> list[SymCoords]:
    """Current images of the anti-correlated line on an ``(r, eps, l)`` grid."""
    if grid < 2:
        raise ValidationError("grid must be at least 2")
    ticks = [Fraction(i, grid - 1) for i in range(grid)]
    points = []
    for r, eps, l in itertools.product(ticks, repeat=3):
        points.append(current_flow(anticorr_line(r), CurrentParams(eps, l)))
    return points


def general_family_sweep(grid: int) -> list[SymCoords]:
    """Float images of a uniform ``(r, eta, nu)`` grid restricted to valid q."""
    ticks = np.linspace(0, 1, grid)
    nus = np.linspace(0, 0.5, grid)
    r, eta, nu = (v.ravel() for v in np.meshgrid(ticks, ticks, nus, indexing="ij"))
    q = (1 - r) / 3 + nu / (1 - nu) * (4 * eta - 1) / 3
    ok = (q >= -1e-12) & (q <= 0.5 + 1e-12)
    r, eta, nu = r[ok], eta[ok], nu[ok]
    s111 = ((1 - nu) * r + eta * nu) / 4
    s123 = (1 + 2 * (1 - nu) * r + (3 - 10 * eta) * nu) / 4
    return [SymCoords(a, 1 - a - c, c) for a, c in zip(s111, s123)]


@dataclass
class RegionPolygon:
    vertices: list[TernaryPoint]
    provenance: list[str]
    method: dict = field(default_factory=dict)

    def polygon(self) -> Polygon:
        return Polygon([(v.x, v.y) for v in self.vertices])

    def sym_vertices(self) -> list[SymCoords]:
        return [from_ternary((v.x, v.y)) for v in self.vertices]


def _xy(points) -> np.ndarray:
    return np.array([(p.x, p.y) for p in map(ternary_point, points)])


def _family_shape(xy: np.ndarray, spacing: float):
    """Convex hull if it is filled by the points, otherwise a concave hull."""
    hull = MultiPoint([tuple(p) for p in xy]).convex_hull
    if hull.geom_type != "Polygon":
        return hull.buffer(spacing / 2), "degenerate"
    tree = cKDTree(xy)
    # Probe the hull interior on a lattice finer than the sweep spacing.
    minx, miny, maxx, maxy = hull.bounds
    gx, gy = np.meshgrid(np.arange(minx, maxx, spacing / 2), np.arange(miny, maxy, spacing / 2))
    probes = np.column_stack([gx.ravel(), gy.ravel()])
    inside = shapely.contains_xy(hull, probes[:, 0], probes[:, 1])
    if not inside.any():
        return hull, "convex"
    gaps, _ = tree.query(probes[inside])
    if gaps.max() <= 2 * spacing:
        return hull, "convex"
    for ratio in (0.02, 0.05, 0.1, 0.2, 0.4):
        shape = shapely.concave_hull(MultiPoint([tuple(p) for p in xy]), ratio=ratio)
        if shape.geom_type == "Polygon" and shape.buffer(1e-12).contains(MultiPoint([tuple(p) for p in xy])):
            return shape, f"concave(ratio={ratio})"
    return hull, "convex-fallback"


def inner_region(grid: int = 60) -> RegionPolygon:
    """Boundary of the union of all analytically certified families."""
    if grid < 10:
        raise ValidationError("grid must be at least 10")
    families = {
        "general": general_family_sweep(grid),
        "prior_local": [prior_local_line(t) for t in np.linspace(0, 1, grid)],
        "spike": [SymCoords(*(float(v) for v in s.as_tuple())) for s in spike_region(max(2, grid // 4))],
    }
    shapes, method = [], {}
    for name, pts in families.items():
        xy = _xy(pts)
        spacing = 1.0 / (grid - 1)
        shape, how = _family_shape(xy, spacing)
        shapes.append((name, shape))
        method[name] = how
    union = shapely.union_all([s for _, s in shapes])
    if union.geom_type != "Polygon":
        union = max(union.geoms, key=lambda g: g.area)
    coords = list(union.exterior.coords)[:-1]
    vertices, provenance = [], []
    for x, y in coords:
        vertices.append(TernaryPoint(float(x), float(y)))
        pt = Point(x, y)
        provenance.append(min(shapes, key=lambda ns: ns[1].exterior.distance(pt)
                              if ns[1].geom_type == "Polygon" else ns[1].distance(pt))[0])
    return RegionPolygon(vertices, provenance, method)


def contains(region: RegionPolygon, s: SymCoords, tol: float = 1e-9) -> bool:
    pt = ternary_point(s)
    return bool(region.polygon().buffer(tol).covers(Point(pt.x, pt.y)))


def points_outside(points, region_shape, tol=1e-9) -> list:
    shape = region_shape.buffer(tol)
    return [p for p in points if not shape.covers(Point(*(lambda t: (t.x, t.y))(ternary_point(p))))]
