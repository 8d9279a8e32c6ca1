"""Acceptance checks, one test per numbered criterion.

Expected values are typed in from the published closed forms; the
package's own closed-form helpers are not used as oracles here.  A summary
line per criterion is printed at the end of the session (see conftest).
"""

import random
import time
from fractions import Fraction

import numpy as np
import pytest

from trianglescope import families as fam
from trianglescope import flags as fl
from trianglescope import inequalities as iq
from trianglescope import nnlocal as nn
from trianglescope import oracle as orc
from trianglescope.dist_core import (
    SymCoords,
    distance,
    ejm_distribution,
    finner_check,
    finner_s111_bound,
    from_entries,
    from_sym_coords,
    deterministic,
    is_fully_symmetric,
    sym_coords,
    uniform_distribution,
)

F = Fraction
pytestmark = pytest.mark.acceptance


def _random_params(rng):
    while True:
        r, eta = F(rng.randint(0, 60), 60), F(rng.randint(0, 60), 60)
        nu = F(rng.randint(0, 119), 240)
        q = (1 - r) / 3 + nu / (1 - nu) * (4 * eta - 1) / 3
        if 0 <= q <= F(1, 2):
            return r, eta, nu


def test_criterion_01_ejm_constants():
    assert sym_coords(ejm_distribution()).as_tuple() == (F(25, 64), F(9, 64), F(30, 64))


def test_criterion_02_squares_strategy():
    events = [(1, 1, 1), (2, 2, 2), (3, 3, 3), (4, 4, 4), (1, 4, 3), (2, 3, 4), (3, 2, 1), (4, 1, 2)]
    p = fl.evaluate(fl.squares_flags())
    assert p.exact
    assert p == from_entries(4, [(e, F(1, 8)) for e in events])
    assert sum(p[k, k, k] for k in range(1, 5)) == F(1, 2)


def test_criterion_03_family_identities():
    start = time.perf_counter()
    rng = random.Random(2024)
    for _ in range(1000):
        r, eta, nu = _random_params(rng)
        expected = SymCoords(((1 - nu) * r + eta * nu) / 4,
                             3 * ((1 - nu) * (1 - r) + 3 * eta * nu) / 4,
                             (1 + (1 - nu) * 2 * r + (3 - 10 * eta) * nu) / 4)
        assert sym_coords(fl.evaluate(fl.general_flags(r, eta, nu))) == expected
    for i in range(25):
        r = F(i, 24)
        assert sym_coords(fl.evaluate(fl.anticorr_flags(r))) == SymCoords(r / 48, (4 - r) / 16, (18 + r) / 24)
        nu = F(i, 72)
        assert sym_coords(fl.evaluate(fl.maxcorr_flags(nu))) == SymCoords(F(1, 4), 9 * nu / 4, (3 - 9 * nu) / 4)
        for n in (3, 4, 5, 6):
            got = sym_coords(fl.evaluate(fl.n_outcome_flags(n, nu)))
            assert got == SymCoords(F(1, n), 3 * nu * (n - 1) / n, (1 - 3 * nu) * (n - 1) / n)
    assert time.perf_counter() - start < 10


def test_criterion_04_table_endpoints():
    stated = {
        "purple": ((F(1, 4), F(3, 4), 0), (F(1, 4), 0, F(3, 4))),
        "red": ((F(1, 28), F(27, 28), 0), (F(1, 4), F(3, 4), 0)),
        "grey": ((0, F(3, 4), F(1, 4)), (F(1, 28), F(27, 28), 0)),
        "dark green": ((0, F(3, 8), F(5, 8)), (F(1, 4), 0, F(3, 4))),
        "light blue": ((0, F(3, 4), F(1, 4)), (0, F(3, 8), F(5, 8))),
        "dark blue": ((0, F(3, 4), F(1, 4)), (F(1, 4), 0, F(3, 4))),
    }
    lines = {line.label: line for line in fam.table_lines()}
    assert set(lines) == set(stated)
    for label, (start, end) in stated.items():
        assert lines[label].start.as_tuple() == tuple(F(v) for v in start)
        assert lines[label].end.as_tuple() == tuple(F(v) for v in end)


def test_criterion_05_two_party_marginals():
    p = fl.evaluate(fl.two_party_marginal_flags())
    for pair in ((0, 1), (1, 2), (0, 2)):
        m = p.pair_marginal(*pair)
        for a in range(4):
            for b in range(4):
                assert m[a, b] == (F(7, 64) if a == b else F(3, 64))
    assert all(p[k, k, k] == F(1, 16) for k in range(1, 5))


def _symmetric_bases(rng):
    while True:
        kind = rng.choice(["maxcorr", "anticorr", "general"])
        if kind == "maxcorr":
            yield fl.maxcorr_flags(F(rng.randint(0, 12), 36))
        elif kind == "anticorr":
            yield fl.anticorr_flags(F(rng.randint(0, 12), 12))
        else:
            # general flags are symmetric on the whole family
            yield fl.general_flags(*_random_params(rng))


def test_criterion_06_decorrelation_currents():
    start = time.perf_counter()
    rng = random.Random(6)
    for _ in range(100_000):
        i, j = rng.randint(0, 240), rng.randint(0, 240)
        i, j = min(i, j), max(i, j)
        s0 = SymCoords(F(i, 240), F(j - i, 240), F(240 - j, 240))
        s = fam.current_flow(s0, fam.CurrentParams(F(rng.randint(0, 50), 50), F(rng.randint(0, 50), 50)))
        assert sum(s.as_tuple()) == 1 and min(s.as_tuple()) >= 0
    bases = _symmetric_bases(rng)
    n = 10 ** 6
    for case in range(20):
        base = next(bases)
        params = fam.CurrentParams(F(rng.randint(0, 20), 20), F(rng.randint(0, 20), 20))
        expected = fam.current_flow(sym_coords(fl.evaluate(base)), params)
        got = sym_coords(fam.current_model_sample(base, params, n, seed=case)).as_tuple()
        err = fam.sym_standard_errors(expected, n)
        for g, e, se in zip(got, expected.as_tuple(), err):
            assert abs(g - float(e)) <= 3 * se + 1e-12, (case, params)
    assert time.perf_counter() - start < 60


def test_criterion_07_finner():
    models = [fl.squares_flags(), fl.maxcorr_flags(F(1, 6)), fl.anticorr_flags(F(1, 2)),
              fl.general_flags(F(1, 3), F(1, 2), F(1, 4)), fl.two_party_marginal_flags(),
              fl.latin_square_flags([F(1, 2), F(1, 3), F(1, 6)]), fl.n_outcome_flags(5, F(1, 7)),
              fl.three_outcome_counterexample_flags(), fl.constant_flags(4, 2)]
    dists = [fl.evaluate(m) for m in models]
    dists.append(orc.p_dagger())
    rng = random.Random(7)
    for _ in range(50):
        n = rng.randint(2, 4)
        tables = {p: [[rng.randint(1, n) for _ in range(2)] for _ in range(2)] for p in fl.PARTY_AXES}
        weights = {a: [F(1, 3), F(2, 3)] for a in fl.AXES}
        dists.append(orc.evaluate_discrete(orc.DiscreteLocalModel(n, weights, tables)))
    for p in dists:
        assert finner_check(p).satisfied
    assert finner_check(ejm_distribution()).satisfied
    assert finner_s111_bound(4) == 0.5
    for n in range(1, 9):
        assert abs(finner_s111_bound(n) - n ** -0.5) <= 1e-12


def test_criterion_08_penalties_and_bounds():
    all_one = deterministic(4, 1, 1, 1)
    squares = fl.evaluate(fl.squares_flags())
    assert iq.delta_penalty(all_one, 1) == F(3, 2)
    assert iq.delta_penalty(squares, 2) == F(5, 96)
    assert iq.delta_penalty(squares, 1) == F(5, 6)
    assert iq.delta_w_bound_coefficients(all_one, 1) == (F(3, 2), -F(135, 64))
    sym = from_sym_coords(SymCoords.of("1/4", "3/8", "3/8"), 4)
    assert iq.delta_w_bound_coefficients(sym, 1) == (0, F(9, 64))
    assert iq.delta_w_bound_coefficients(squares, 2) == (F(5, 96), -F(124, 768))
    report = iq.evaluate_conjectured(ejm_distribution())
    assert report.lhs_l1 == 25 / 64 and report.lhs_l1 > 0.289
    assert report.violates_l1 and report.violates_l2


def test_criterion_09_latin_uniqueness():
    start = time.perf_counter()
    report = orc.verify_latin_uniqueness(max_card=3)
    assert report.s111_values == [F(1, 3)]
    assert report.p_dagger_realized and report.free_alpha_families > 0
    assert not report.counterexamples and report.confirmed
    assert time.perf_counter() - start < 600


def test_criterion_10_three_outcome_counterexample():
    p = fl.evaluate(fl.three_outcome_counterexample_flags())
    assert p.exact and p.n_outcomes == 3
    assert sym_coords(p) == SymCoords(F(7, 18), F(7, 18), F(2, 9))
    assert is_fully_symmetric(p)
    assert sym_coords(p).s111 > F(1, 3)


def _fd_error(model, objective, m, seed, h=1e-7):
    grads = nn.gradient(model, objective, m, seed)
    fd = []
    for p in model.parameters():
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + h
            up = nn.loss_at(model, objective, m, seed)
            p[idx] = old - h
            down = nn.loss_at(model, objective, m, seed)
            p[idx] = old
            g[idx] = (up - down) / (2 * h)
        fd.append(g)
    a = np.concatenate([g.ravel() for g in grads])
    b = np.concatenate([g.ravel() for g in fd])
    return np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b))


EVAL_SAMPLES = 100_000


def _best_distance(target, restarts, stop_at=None):
    """Train independent restarts; stop early once ``stop_at`` is reached."""
    best = np.inf
    for restart in range(restarts):
        cfg = nn.TrainConfig(objective=nn.DistanceObjective(target),
                             n_outcomes=target.n_outcomes, restarts=1, seed=restart,
                             eval_samples=EVAL_SAMPLES)
        best = min(best, distance(nn.train(cfg).distribution, target))
        if stop_at is not None and best <= stop_at:
            break
    return best


def test_criterion_11_neural_trainability():
    start = time.perf_counter()
    for seed in range(20):
        model = nn.NeuralLocalModel.init(np.random.default_rng(seed), 4, (3, 3))
        assert _fd_error(model, nn.DistanceObjective(ejm_distribution()), 64, seed) <= 1e-4
    assert _best_distance(uniform_distribution(4), 10, stop_at=1e-2) <= 1e-2
    maxcorr_point = from_sym_coords(SymCoords.of("1/4", "3/8", "3/8"), 4)
    assert _best_distance(maxcorr_point, 10, stop_at=2e-2) <= 2e-2
    assert _best_distance(ejm_distribution(), 10) >= 5e-2
    assert time.perf_counter() - start < 30 * 60


def test_criterion_12_discretization():
    assert fl.evaluate(nn.discretize_to_flags(nn.squares_model(), 2)) == fl.evaluate(fl.squares_flags())
    assert nn.discretize_to_flags(nn.squares_model(), 2).alice.is_deterministic()
    witness = fl.near_symmetric_witness_flags()
    p = fl.evaluate(witness)
    s111 = sym_coords(p).s111
    assert F(28, 100) <= s111 <= F(30, 100)
    assert iq.delta_penalty(p, 1) <= F(2, 100)
