import itertools
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from trianglescope import flags as fl
from trianglescope import inequalities as iq
from trianglescope import nnlocal as nn
from trianglescope.dist_core import (
    OutcomeDistribution,
    SymCoords,
    ValidationError,
    deterministic,
    ejm_distribution,
    from_sym_coords,
    is_fully_symmetric,
    symmetrize,
    uniform_distribution,
)

from strategies import exact_distributions, fractions_in_unit

F = Fraction
ALL_ONE = deterministic(4, 1, 1, 1)


def squares():
    return fl.evaluate(fl.squares_flags())


def test_penalty_examples():
    assert iq.delta_penalty(ejm_distribution(), 1) == 0
    assert iq.delta_penalty(ALL_ONE, 1) == F(3, 2)
    assert iq.delta_penalty(squares(), 2) == F(5, 96)
    assert iq.delta_penalty(squares(), 1) == F(5, 6)


def test_penalty_rejects_bad_input():
    with pytest.raises(ValidationError):
        iq.delta_penalty(uniform_distribution(3), 1)
    with pytest.raises(ValidationError):
        iq.delta_penalty(uniform_distribution(4), 3)


def test_f_w_examples():
    for w in (F(0), F(1, 3), F(1)):
        for l in (1, 2):
            assert iq.f_w(ejm_distribution(), iq.InequalitySpec(w, l)) == w * F(25, 64)
    assert iq.f_w(ALL_ONE, iq.InequalitySpec(1, 1)) == 1
    assert iq.f_w(squares(), iq.InequalitySpec(0, 2)) == -F(5, 96)
    with pytest.raises(ValidationError):
        iq.InequalitySpec(F(3, 2), 1)


@given(exact_distributions(n=4), fractions_in_unit(), fractions_in_unit(), fractions_in_unit())
def test_f_w_is_affine_in_w(p, a, b, t):
    mid = a + t * (b - a)
    fa, fb = iq.f_w(p, iq.InequalitySpec(a, 1)), iq.f_w(p, iq.InequalitySpec(b, 1))
    assert iq.f_w(p, iq.InequalitySpec(mid, 1)) == fa + t * (fb - fa)


@given(exact_distributions(n=4))
def test_penalty_zero_iff_class_constant(p):
    for l in (1, 2):
        assert (iq.delta_penalty(p, l) == 0) == is_fully_symmetric(p)
        assert iq.delta_penalty(symmetrize(p), l) == 0


@given(exact_distributions(n=4), st.permutations(range(4)), st.permutations(range(3)))
def test_penalty_invariant_under_relabelling(p, sigma, axes):
    probs = np.transpose(p.probs, axes)
    out = np.empty_like(probs)
    for a, b, c in itertools.product(range(4), repeat=3):
        out[sigma[a], sigma[b], sigma[c]] = probs[a, b, c]
    q = OutcomeDistribution(out)
    for l in (1, 2):
        assert iq.delta_penalty(q, l) == iq.delta_penalty(p, l)


def test_conjectured_inequalities():
    r = iq.evaluate_conjectured(ejm_distribution())
    assert r.lhs_l1 == pytest.approx(25 / 64) and r.violates_l1 and r.violates_l2
    r = iq.evaluate_conjectured(squares())
    assert r.lhs_l1 == pytest.approx(0.5 - 0.475 * 5 / 6, abs=1e-3) and not r.violates_l1
    r = iq.evaluate_conjectured(uniform_distribution(4))
    assert r.lhs_l1 == pytest.approx(1 / 16) and not r.violates_l1


def test_displayed_coefficients_follow_optimal_weights():
    assert round(iq.coefficient(1), 3) == 0.475
    assert round(iq.coefficient(2), 3) == 5.211


def test_bound_coefficients():
    assert iq.delta_w_bound_coefficients(ALL_ONE, 1) == (F(3, 2), -F(135, 64))
    sym = from_sym_coords(SymCoords.of("1/4", "3/8", "3/8"), 4)
    assert iq.delta_w_bound_coefficients(sym, 1) == (0, F(9, 64))
    assert iq.delta_w_bound_coefficients(squares(), 2) == (F(5, 96), -F(31, 192))
    assert iq.delta_w_bound(ALL_ONE, F(1, 2), 1) == F(3, 2) - F(135, 128)


def test_negative_control_penalties_vanish_on_squares():
    p = squares()
    assert iq.delta_penalty_111(p, 1) == 0
    assert iq.marginal_penalty(p, 2) == 0
    assert iq.delta_penalty(p, 1) > 0


def test_estimate_delta_w_at_w_one():
    cfg = nn.TrainConfig(objective=None, n_samples=512, epochs=80, sgd_epochs=0,
                         restarts=2, seed=0, hidden=(8, 8))
    est = iq.estimate_delta_w(1.0, 1, cfg)
    assert est.delta_estimate <= 0
    assert set(est.summary) == {"min", "median"}
    rows = iq.estimate_csv_rows([est]).splitlines()
    assert rows[0] == "w,l,f_best,delta_estimate,restart_count,seed" and len(rows) == 2


def test_estimate_delta_w_at_w_zero():
    # sup f_0 = 0 is reached by any symmetric model; training approaches it from below
    cfg = nn.TrainConfig(objective=None, n_samples=512, epochs=1000, sgd_epochs=0,
                         restarts=1, seed=0, hidden=(8, 8))
    assert iq.estimate_delta_w(0.0, 2, cfg).delta_estimate <= 1e-4
