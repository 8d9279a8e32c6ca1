"""Finite-alphabet local models, exhaustive search and exact verification.

A :class:`DiscreteLocalModel` holds finite source alphabets with weights and
per-party response tables, wired like the flags (Alice reads
``table[beta][gamma]``, Bob ``table[gamma][alpha]``, Charlie
``table[alpha][beta]``).  The constraint solver enumerates deterministic
table triples whose every cell triple obeys a pattern predicate, and the
latin-square verification combines that enumeration with an exact argument
on the source weights.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable

import numpy as np

from .dist_core import (
    MAX_OUTCOMES,
    OutcomeDistribution,
    SymCoords,
    ValidationError,
    from_sym_coords,
    is_fully_symmetric,
    max_symmetry_deviation,
    sym_coords,
    to_fraction,
)
from .flags import AXES, PARTY_AXES, FlagModel, refine_axes, step_flags

PARTIES = ("alice", "bob", "charlie")
DEFAULT_BUDGET = 10**8


def _as_vector(entry, n):
    if isinstance(entry, (int, np.integer)):
        k = int(entry)
        if not 1 <= k <= n:
            raise ValidationError(f"outcome {k} outside 1..{n}")
        return tuple(Fraction(int(i == k - 1)) for i in range(n))
    vec = tuple(to_fraction(v) for v in entry)
    if len(vec) != n or any(v < 0 for v in vec) or sum(vec) != 1:
        raise ValidationError(f"invalid outcome vector {entry!r}")
    return vec


@dataclass(frozen=True)
class DiscreteLocalModel:
    """Source weights plus response tables; entries are outcomes or vectors."""

    n_outcomes: int
    weights: dict
    tables: dict

    def __post_init__(self):
        if not 1 <= self.n_outcomes <= MAX_OUTCOMES:
            raise ValidationError(f"n_outcomes must be in 1..{MAX_OUTCOMES}")
        weights = {}
        for axis in AXES:
            ws = [to_fraction(w) for w in self.weights[axis]]
            if not ws or any(w < 0 for w in ws) or sum(ws) != 1:
                raise ValidationError(f"weights of source {axis} are not a probability vector")
            weights[axis] = tuple(ws)
        object.__setattr__(self, "weights", weights)
        cards = self.cards
        tables = {}
        for party in PARTIES:
            x_axis, y_axis = PARTY_AXES[party]
            table = self.tables[party]
            nx, ny = cards[x_axis], cards[y_axis]
            if len(table) != nx or any(len(row) != ny for row in table):
                raise ValidationError(f"{party}'s table must be {nx}x{ny}")
            tables[party] = tuple(tuple(_as_vector(e, self.n_outcomes) for e in row) for row in table)
        object.__setattr__(self, "tables", tables)

    @property
    def cards(self) -> dict:
        return {axis: len(self.weights[axis]) for axis in AXES}

    def card_tuple(self) -> tuple[int, int, int]:
        return tuple(self.cards[a] for a in AXES)

    def is_deterministic(self) -> bool:
        return all(max(v) == 1 for t in self.tables.values() for row in t for v in row)

    def to_flags(self) -> FlagModel:
        """Step-function embedding; breaks sit at the cumulative weights."""
        return step_flags(self.n_outcomes, self.weights, self.tables)

    @classmethod
    def from_flags(cls, model: FlagModel) -> "DiscreteLocalModel":
        """Read a flag model as a discrete one: each refined interval is a symbol."""
        breaks = refine_axes(model)
        weights = {axis: [b1 - b0 for b0, b1 in zip(bs, bs[1:])] for axis, bs in breaks.items()}
        tables = {}
        for party, flag in zip(PARTIES, model.parties()):
            x_axis, y_axis = PARTY_AXES[party]
            cells = flag.refined(breaks[x_axis], breaks[y_axis])
            tables[party] = [[_compact(tuple(cells[i, j])) for j in range(cells.shape[1])]
                             for i in range(cells.shape[0])]
        return cls(model.n_outcomes, weights, tables)

    def to_json(self) -> dict:
        return {
            "n_outcomes": self.n_outcomes,
            "weights": {axis: [str(w) for w in self.weights[axis]] for axis in AXES},
            "tables": {party: [[_entry_json(v) for v in row] for row in self.tables[party]]
                       for party in PARTIES},
        }

    @classmethod
    def from_json(cls, data: dict) -> "DiscreteLocalModel":
        try:
            tables = {p: [[e if isinstance(e, int) else [to_fraction(v) for v in e] for e in row]
                          for row in data["tables"][p]] for p in PARTIES}
            return cls(int(data["n_outcomes"]), dict(data["weights"]), tables)
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed discrete model JSON: {exc}") from exc

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=1)


def _compact(vec):
    if max(vec) == 1:
        return vec.index(max(vec)) + 1
    return vec


def _entry_json(vec):
    if max(vec) == 1:
        return vec.index(max(vec)) + 1
    return [str(v) for v in vec]


def load_discrete(path) -> DiscreteLocalModel:
    with open(path) as fh:
        return DiscreteLocalModel.from_json(json.load(fh))


def evaluate_discrete(model: DiscreteLocalModel, exact: bool = True) -> OutcomeDistribution:
    """Sum of weight products times response probabilities over all symbol triples."""
    dtype = object if exact else float
    conv = (lambda v: v) if exact else float
    w = {axis: np.array([conv(x) for x in model.weights[axis]], dtype=dtype) for axis in AXES}
    q = {party: np.array([[[conv(x) for x in v] for v in row] for row in model.tables[party]],
                         dtype=dtype) for party in PARTIES}
    # fold the weights into the tables, then contract one source at a time
    qa = q["alice"] * w["beta"][:, None, None] * w["gamma"][None, :, None]   # (j, k, a)
    qb = q["bob"]                                                             # (k, i, b)
    qc = q["charlie"] * w["alpha"][:, None, None]                             # (i, j, c)
    n = model.n_outcomes
    probs = np.zeros((n, n, n), dtype=dtype)
    if exact:
        probs[...] = Fraction(0)
    for i in range(len(w["alpha"])):
        # (j, k, a) x (k, b) -> (j, a, b), then with (j, c) -> (a, b, c)
        jab = np.tensordot(qa, qb[:, i, :], axes=([1], [0]))
        probs = probs + np.tensordot(jab, qc[i], axes=([0], [0]))
    return OutcomeDistribution(probs)


# --------------------------------------------------------------------------
# constraint solving


def _allowed_pattern(name: str, n: int) -> Callable[[int, int, int], bool]:
    if name == "equal_or_distinct":
        return lambda a, b, c: len({a, b, c}) != 2
    if name == "any":
        return lambda a, b, c: True
    raise ValidationError(f"unknown pattern {name!r}")


@dataclass(frozen=True)
class CspInstance:
    """Deterministic tables at fixed cardinalities with a per-cell-triple predicate.

    ``cards`` is ``(c_alpha, c_beta, c_gamma)``.  ``allowed`` is either a
    pattern name (``"equal_or_distinct"``) or a set of allowed 1-based
    outcome triples.
    """

    n_outcomes: int
    cards: tuple
    allowed: object = "equal_or_distinct"

    def __post_init__(self):
        if not 1 <= self.n_outcomes <= MAX_OUTCOMES:
            raise ValidationError(f"n_outcomes must be in 1..{MAX_OUTCOMES}")
        if len(self.cards) != 3 or any(int(c) < 1 for c in self.cards):
            raise ValidationError("cards must be three positive integers")
        object.__setattr__(self, "cards", tuple(int(c) for c in self.cards))

    def allowed_table(self) -> np.ndarray:
        n = self.n_outcomes
        if isinstance(self.allowed, str):
            pred = _allowed_pattern(self.allowed, n)
        else:
            triples = {tuple(t) for t in self.allowed}
            pred = lambda a, b, c: (a, b, c) in triples  # noqa: E731
        ok = np.zeros((n, n, n), dtype=bool)
        for a, b, c in itertools.product(range(1, n + 1), repeat=3):
            ok[a - 1, b - 1, c - 1] = pred(a, b, c)
        return ok


@dataclass
class CspResult:
    solutions: list
    complete: bool
    nodes: int

    @property
    def incomplete(self) -> bool:
        return not self.complete


def _variables(cards):
    ca, cb, cg = cards
    names = []
    names += [("alice", j, k) for j in range(cb) for k in range(cg)]
    names += [("bob", k, i) for k in range(cg) for i in range(ca)]
    names += [("charlie", i, j) for i in range(ca) for j in range(cb)]
    return names


def solve_csp(instance: CspInstance, budget: int = DEFAULT_BUDGET) -> CspResult:
    """All deterministic table triples obeying the constraint on every cell triple.

    Backtracking in fixed order (Alice's cells, then Bob's, then Charlie's;
    lowest outcome first) with forward checking: once two of the three cells
    of a triple are fixed, the third loses every outcome that would break the
    constraint.  The search stops after ``budget`` node visits and then
    reports an incomplete result.
    """
    n = instance.n_outcomes
    ca, cb, cg = instance.cards
    ok = instance.allowed_table()
    names = _variables(instance.cards)
    index = {name: v for v, name in enumerate(names)}
    # triples of variables: (alice[j,k], bob[k,i], charlie[i,j])
    triples = [(index["alice", j, k], index["bob", k, i], index["charlie", i, j])
               for i in range(ca) for j in range(cb) for k in range(cg)]
    involved = [[] for _ in names]
    for t, (x, y, z) in enumerate(triples):
        for v in (x, y, z):
            involved[v].append(t)

    full = (1 << n) - 1
    domains = [full] * len(names)
    value = [-1] * len(names)
    solutions = []
    nodes = 0
    complete = True

    def prune(var):
        """Forward-check triples touching ``var``; returns the undo log or None."""
        log = []
        for t in involved[var]:
            x, y, z = triples[t]
            vals = (value[x], value[y], value[z])
            unassigned = [pos for pos in range(3) if vals[pos] < 0]
            if not unassigned:
                if not ok[vals]:
                    return log, False
                continue
            if len(unassigned) > 1:
                continue
            pos = unassigned[0]
            target = (x, y, z)[pos]
            mask = 0
            for o in range(n):
                trial = list(vals)
                trial[pos] = o
                if ok[tuple(trial)]:
                    mask |= 1 << o
            new = domains[target] & mask
            if new != domains[target]:
                log.append((target, domains[target]))
                domains[target] = new
                if new == 0:
                    return log, False
        return log, True

    def search(var):
        nonlocal nodes, complete
        if var == len(names):
            solutions.append(tuple(value))
            return
        for o in range(n):
            if not domains[var] >> o & 1:
                continue
            nodes += 1
            if nodes > budget:
                complete = False
                return
            value[var] = o
            log, feasible = prune(var)
            if feasible:
                search(var + 1)
            for target, old in reversed(log):
                domains[target] = old
            value[var] = -1
            if not complete:
                return

    search(0)
    return CspResult([_unflatten(sol, instance.cards) for sol in solutions], complete, nodes)


def _unflatten(flat, cards):
    ca, cb, cg = cards
    it = iter(flat)
    alice = [[next(it) + 1 for _ in range(cg)] for _ in range(cb)]
    bob = [[next(it) + 1 for _ in range(ca)] for _ in range(cg)]
    charlie = [[next(it) + 1 for _ in range(cb)] for _ in range(ca)]
    return {"alice": alice, "bob": bob, "charlie": charlie}


def _tables_key(tables) -> tuple:
    return tuple(tuple(tuple(row) for row in tables[p]) for p in PARTIES)


def _transform(tables, colour, perm_alpha, perm_beta, perm_gamma):
    """Apply a colour map and per-source symbol permutations (new[x] = old[perm[x]])."""
    a, b, c = tables["alice"], tables["bob"], tables["charlie"]
    alice = tuple(tuple(colour[a[pj][pk] - 1] for pk in perm_gamma) for pj in perm_beta)
    bob = tuple(tuple(colour[b[pk][pi] - 1] for pi in perm_alpha) for pk in perm_gamma)
    charlie = tuple(tuple(colour[c[pi][pj] - 1] for pj in perm_beta) for pi in perm_alpha)
    return (alice, bob, charlie)


def canonical_classes(solutions, n_outcomes: int, cards) -> list[dict]:
    """Group solutions into orbits of colour and symbol relabelings.

    Returns one representative (the lexicographically smallest member) per
    orbit with the orbit size among the given solutions.
    """
    ca, cb, cg = cards
    colours = [tuple(c + 1 for c in p) for p in itertools.permutations(range(n_outcomes))]
    group = list(itertools.product(colours, itertools.permutations(range(ca)),
                                   itertools.permutations(range(cb)),
                                   itertools.permutations(range(cg))))
    present = {_tables_key(s) for s in solutions}
    seen = set()
    classes = []
    for sol in solutions:
        key = _tables_key(sol)
        if key in seen:
            continue
        orbit = {_transform(sol, *g) for g in group}
        seen |= orbit
        rep = min(orbit)
        classes.append({"tables": {p: [list(r) for r in t] for p, t in zip(PARTIES, rep)},
                        "orbit_size": len(orbit & present)})
    classes.sort(key=lambda c: _tables_key(c["tables"]))
    return classes


# --------------------------------------------------------------------------
# latin-square verification


def z3_labels(tables, cards):
    """Per-symbol labels in ``Z_3`` with a(j,k) = f_j + g_k, b(k,i) = h_i - g_k, c(i,j) = -h_i - f_j.

    With three colours read as ``Z_3`` values, "all equal or all distinct"
    is the statement ``a + b + c = 0 (mod 3)``; fixing ``alpha_0`` then
    forces this additive form.  The labels are recovered from the tables and
    checked against every entry, so a failure raises.
    """
    ca, cb, cg = cards
    A = [[x - 1 for x in row] for row in tables["alice"]]
    B = [[x - 1 for x in row] for row in tables["bob"]]
    C = [[x - 1 for x in row] for row in tables["charlie"]]
    f = [(-C[0][j]) % 3 for j in range(cb)]
    g = [(-B[k][0]) % 3 for k in range(cg)]
    h = [(B[0][i] + g[0]) % 3 for i in range(ca)]
    for j, k in itertools.product(range(cb), range(cg)):
        if A[j][k] != (f[j] + g[k]) % 3:
            raise ValidationError("tables are not of additive form")
    for k, i in itertools.product(range(cg), range(ca)):
        if B[k][i] != (h[i] - g[k]) % 3:
            raise ValidationError("tables are not of additive form")
    for i, j in itertools.product(range(ca), range(cb)):
        if C[i][j] != (-h[i] - f[j]) % 3:
            raise ValidationError("tables are not of additive form")
    return {"alpha": h, "beta": f, "gamma": g}


def _label_uniform_weights(labels) -> list[Fraction] | None:
    """Strictly positive weights giving each ``Z_3`` label mass 1/3, if possible."""
    counts = [labels.count(t) for t in range(3)]
    if min(counts) == 0:
        return None
    return [Fraction(1, 3 * counts[t]) for t in labels]


def _is_latin(table) -> bool:
    n = len(table)
    return (all(len(row) == n for row in table)
            and all(len(set(row)) == n for row in table)
            and all(len({row[k] for row in table}) == n for k in range(n)))


def _reduced(tables, cards) -> bool:
    """No two symbols of one source act identically in every table."""
    ca, cb, cg = cards
    A, B, C = tables["alice"], tables["bob"], tables["charlie"]
    alpha = [(tuple(B[k][i] for k in range(cg)), tuple(C[i])) for i in range(ca)]
    beta = [(tuple(A[j]), tuple(C[i][j] for i in range(ca))) for j in range(cb)]
    gamma = [(tuple(A[j][k] for j in range(cb)), tuple(B[k])) for k in range(cg)]
    return all(len(set(s)) == len(s) for s in (alpha, beta, gamma))


@dataclass
class LatinReport:
    s111_values: list
    p_dagger_realized: bool
    free_alpha_families: int
    per_cards: list = field(default_factory=list)
    counterexamples: list = field(default_factory=list)

    @property
    def confirmed(self) -> bool:
        return not self.counterexamples and self.s111_values == [Fraction(1, 3)] and self.p_dagger_realized

    def to_json(self) -> dict:
        return {
            "confirmed": self.confirmed,
            "s111_values": [str(v) for v in self.s111_values],
            "p_dagger_realized": self.p_dagger_realized,
            "free_alpha_families": self.free_alpha_families,
            "counterexamples": self.counterexamples,
            "per_cards": self.per_cards,
        }


def p_dagger() -> OutcomeDistribution:
    """Symmetric three-outcome distribution (1/3, 0, 2/3) of the Latin-square solutions.

    For Latin tables it depends only on the label masses of the sources,
    not on how symbols are named.
    """
    return from_sym_coords(SymCoords(Fraction(1, 3), Fraction(0), Fraction(2, 3)), 3)


def verify_latin_uniqueness(max_card: int = 3, budget: int = DEFAULT_BUDGET) -> LatinReport:
    """Exact check that three-outcome symmetric models without ``a=b!=c`` events have s111 = 1/3.

    For every cardinality triple up to ``max_card`` (zero-weight symbols can
    be dropped, so strictly positive weights suffice), all deterministic
    table triples are enumerated.  Each solution has additive ``Z_3``
    labels; the single-party marginals are then convolutions of the label
    distributions, and over ``Z_3`` a convolution of two distributions is
    uniform iff one of them is.  Uniform marginals for all three parties
    therefore need at least two label-uniform sources.  For each solution
    and each such pair the weights are fixed accordingly and the remaining
    source is taken at every vertex of its simplex; since the distribution
    is linear in that source's weights, equality with ``p_dagger`` at all
    vertices settles the whole face exactly.
    """
    target = p_dagger()
    s111_values = set()
    realized = False
    free_alpha = 0
    per_cards = []
    counterexamples = []
    for cards in itertools.product(range(1, max_card + 1), repeat=3):
        result = solve_csp(CspInstance(3, cards), budget=budget)
        if result.incomplete:
            counterexamples.append({"cards": list(cards), "reason": "search budget exceeded"})
            continue
        feasible = 0
        latin_ok = True
        for tables in result.solutions:
            labels = z3_labels(tables, cards)
            uniform = {axis: _label_uniform_weights(labels[axis]) for axis in AXES}
            capable = [axis for axis in AXES if uniform[axis] is not None]
            if len(capable) < 2:
                continue
            feasible += 1
            if cards == (3, 3, 3) and _reduced(tables, cards) and not _is_latin(tables["alice"]):
                latin_ok = False
            for pair in itertools.combinations(capable, 2):
                (free_axis,) = [a for a in AXES if a not in pair]
                for vertex in range(cards[AXES.index(free_axis)]):
                    weights = {a: uniform[a] for a in pair}
                    weights[free_axis] = [Fraction(int(v == vertex)) for v in range(cards[AXES.index(free_axis)])]
                    p = evaluate_discrete(DiscreteLocalModel(3, weights, tables))
                    s111_values.add(sym_coords(p).s111)
                    if p != target:
                        counterexamples.append({"cards": list(cards), "tables": tables,
                                                "weights": {a: [str(w) for w in ws] for a, ws in weights.items()}})
                    else:
                        realized = True
                if free_axis == "alpha" and cards[0] > 1 and uniform["alpha"] is not None:
                    free_alpha += 1
        per_cards.append({"cards": list(cards), "solutions": len(result.solutions),
                          "feasible": feasible, "nodes": result.nodes,
                          "reduced_alice_latin": latin_ok})
        if not latin_ok:
            counterexamples.append({"cards": list(cards), "reason": "reduced solution with non-latin Alice table"})
    return LatinReport(sorted(s111_values), realized, free_alpha, per_cards, counterexamples)


# --------------------------------------------------------------------------
# heuristic search for large symmetric s111


@dataclass
class MaxS111Report:
    best_s111: Fraction | float | None
    witness: DiscreteLocalModel | None
    source: str
    evaluated: int
    symmetric_found: int
    exhaustive: bool
    best_unconstrained_s111: Fraction | float | None = None

    def to_json(self) -> dict:
        def num(v):
            return None if v is None else str(v)
        return {
            "best_s111": num(self.best_s111),
            "best_s111_float": None if self.best_s111 is None else float(self.best_s111),
            "source": self.source,
            "evaluated": self.evaluated,
            "symmetric_found": self.symmetric_found,
            "exhaustive": self.exhaustive,
            "best_unconstrained_s111": num(self.best_unconstrained_s111),
            "witness": None if self.witness is None else self.witness.to_json(),
            "note": "inner evidence only: the best model found, not a bound",
        }


def _builtin_seeds(n_outcomes: int):
    from . import flags

    seeds = []
    if n_outcomes == 3:
        seeds.append(("latin_square", flags.latin_square_flags([Fraction(1, 3)] * 3)))
    if n_outcomes == 4:
        seeds.append(("maxcorr(0)", flags.maxcorr_flags(0)))
        seeds.append(("squares", flags.squares_flags()))
    if n_outcomes >= 3:
        seeds.append((f"n_outcome_flags(0)", flags.n_outcome_flags(n_outcomes, 0)))
    seeds.append(("uniform", flags.constant_flags(n_outcomes, 1)))
    return seeds


def _fits(model: DiscreteLocalModel, cards) -> bool:
    return all(c <= limit for c, limit in zip(model.card_tuple(), cards))


def max_s111_search(n_outcomes: int, cards, symmetry_tol: float = 0.0, budget: int = 10**5,
                    witnesses=(), seed: int = 0) -> MaxS111Report:
    """Best fully symmetric ``s111`` among small deterministic models.

    Candidates are the supplied witnesses (any cardinality), built-in
    constructions that fit ``cards``, and deterministic tables at ``cards``
    with uniform weights: exhaustively when there are at most ``budget``
    table triples, otherwise ``budget`` random draws.  With tolerance 0 only
    exactly class-constant distributions qualify; otherwise the largest
    orbit deviation must stay within ``symmetry_tol``.
    """
    cards = tuple(int(c) for c in cards)
    ca, cb, cg = cards
    best = (None, None, "none")
    best_any = None
    evaluated = 0
    symmetric = 0

    def consider(model: DiscreteLocalModel, source: str):
        nonlocal best, best_any, evaluated, symmetric
        evaluated += 1
        p = evaluate_discrete(model)
        s111 = sym_coords(p).s111
        best_any = s111 if best_any is None or s111 > best_any else best_any
        ok = is_fully_symmetric(p) if symmetry_tol == 0 else float(max_symmetry_deviation(p)) <= symmetry_tol
        if not ok:
            return
        symmetric += 1
        if best[0] is None or s111 > best[0]:
            best = (s111, model, source)

    for w in witnesses:
        if isinstance(w, FlagModel):
            w = DiscreteLocalModel.from_flags(w)
        if w.n_outcomes != n_outcomes:
            raise ValidationError("witness has the wrong number of outcomes")
        consider(w, "witness")
    for name, flag_model in _builtin_seeds(n_outcomes):
        model = DiscreteLocalModel.from_flags(flag_model)
        if _fits(model, cards):
            consider(model, f"construction:{name}")

    n_cells = cb * cg + cg * ca + ca * cb
    weights = {"alpha": [Fraction(1, ca)] * ca, "beta": [Fraction(1, cb)] * cb,
               "gamma": [Fraction(1, cg)] * cg}
    exhaustive = n_cells * math.log(n_outcomes) <= math.log(budget)

    def build(flat):
        t = _unflatten([x - 1 for x in flat], cards)
        return DiscreteLocalModel(n_outcomes, weights, t)

    if exhaustive:
        for flat in itertools.product(range(1, n_outcomes + 1), repeat=n_cells):
            consider(build(flat), "exhaustive")
    else:
        rng = np.random.default_rng(seed)
        for _ in range(budget):
            consider(build([int(x) for x in rng.integers(1, n_outcomes + 1, size=n_cells)]), "random")
    return MaxS111Report(best[0], best[1], best[2], evaluated, symmetric, exhaustive, best_any)
