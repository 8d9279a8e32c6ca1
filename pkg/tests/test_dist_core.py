import json
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from trianglescope import dist_core as dc
from trianglescope.dist_core import OutcomeDistribution, SymCoords, ValidationError

from strategies import exact_distributions


def test_ejm_constants():
    p = dc.ejm_distribution()
    assert dc.sym_coords(p).as_tuple() == (Fraction(25, 64), Fraction(9, 64), Fraction(30, 64))
    assert dc.is_fully_symmetric(p)
    assert p[1, 1, 1] == Fraction(25, 256) and p[1, 1, 2] == Fraction(1, 256) and p[1, 2, 3] == Fraction(5, 256)


def test_uniform_sym_coords():
    assert dc.sym_coords(dc.uniform_distribution(4)) == SymCoords.of("1/16", "9/16", "6/16")


def test_rejects_bad_input():
    with pytest.raises(ValidationError):
        OutcomeDistribution(np.full((2, 2, 2), Fraction(1, 7), dtype=object))
    with pytest.raises(ValidationError):
        OutcomeDistribution(np.zeros((9, 9, 9)))
    with pytest.raises(ValidationError):
        OutcomeDistribution(np.zeros((2, 3, 2)))
    bad = np.full((2, 2, 2), 1 / 8)
    bad[0, 0, 0] = -0.1
    with pytest.raises(ValidationError):
        OutcomeDistribution(bad)
    with pytest.raises(ValidationError):
        SymCoords.of("1/2", "1/2", "1/2")


def test_json_round_trip(tmp_path):
    p = dc.ejm_distribution()
    path = tmp_path / "ejm.json"
    dc.save_distribution(p, path)
    assert dc.load_distribution(path) == p
    assert json.loads(path.read_text())["n_outcomes"] == 4


def test_one_based_indexing_and_marginals():
    p = dc.deterministic(3, 1, 2, 3)
    assert p[1, 2, 3] == 1
    assert list(p.marginal(1)) == [0, 1, 0]
    assert p.pair_marginal(0, 2)[0, 2] == 1
    assert p.pair_marginal(2, 0)[2, 0] == 1


def test_extremal_and_from_sym_coords():
    for kind in ("111", "112", "123"):
        p = dc.extremal_distribution(kind, 4)
        assert getattr(dc.sym_coords(p), "s" + kind) == 1
        assert dc.is_fully_symmetric(p)
    with pytest.raises(ValidationError):
        dc.from_sym_coords(SymCoords.of(0, 0, 1), 2)
    assert dc.from_sym_coords(SymCoords.of(1, 0, 0), 2) == dc.extremal_distribution("111", 2)


def test_ternary_corners():
    for s in (SymCoords.of(1, 0, 0), SymCoords.of(0, 1, 0), SymCoords.of(0, 0, 1), SymCoords.of("1/4", "3/8", "3/8")):
        back = dc.from_ternary(dataclass_xy(dc.ternary_point(s)))
        assert np.allclose([float(v) for v in back.as_tuple()], [float(v) for v in s.as_tuple()])
    top = dc.ternary_point(SymCoords.of(1, 0, 0))
    left = dc.ternary_point(SymCoords.of(0, 1, 0))
    right = dc.ternary_point(SymCoords.of(0, 0, 1))
    assert top.y > left.y == right.y and left.x < right.x


def dataclass_xy(t):
    return (t.x, t.y)


def test_finner_bound_values():
    assert dc.finner_s111_bound(4) == 0.5
    for n in range(1, 9):
        assert abs(dc.finner_s111_bound(n) - 1 / math.sqrt(n)) < 1e-12


def test_finner_detects_violation():
    assert dc.finner_check(dc.ejm_distribution()).satisfied
    # p(1,1,1) = 1/2 against sqrt(3/4 * 3/4 * 1/2)
    p = dc.from_entries(2, [((1, 1, 1), "1/2"), ((1, 2, 2), "1/4"), ((2, 1, 2), "1/4")])
    assert dc.finner_check(p).satisfied
    # the two-outcome GHZ distribution violates it: 1/2 > sqrt(1/8)
    ghz = dc.from_entries(2, [((1, 1, 1), "1/2"), ((2, 2, 2), "1/2")])
    report = dc.finner_check(ghz)
    assert not report.satisfied and report.worst_violation > 0


@given(exact_distributions())
def test_distance_is_a_metric(p):
    q = dc.uniform_distribution(p.n_outcomes)
    assert dc.distance(p, p) == 0
    assert dc.distance(p, q) == pytest.approx(dc.distance(q, p))
    r = dc.symmetrize(p)
    assert dc.distance(p, q) <= dc.distance(p, r) + dc.distance(r, q) + 1e-12


@given(exact_distributions())
def test_symmetrize_is_idempotent_and_keeps_sym_coords(p):
    s = dc.symmetrize(p)
    assert dc.symmetrize(s) == s
    assert dc.is_fully_symmetric(s)
    assert dc.sym_coords(s) == dc.sym_coords(p)


@given(exact_distributions(), st.permutations(range(3)))
def test_sym_coords_invariant_under_party_permutation(p, axes):
    q = OutcomeDistribution(np.transpose(p.probs, axes))
    assert dc.sym_coords(q) == dc.sym_coords(p)
    assert dc.max_symmetry_deviation(q) == dc.max_symmetry_deviation(p)


@given(exact_distributions())
def test_sym_coords_sum_to_one_exactly(p):
    assert sum(dc.sym_coords(p).as_tuple()) == 1


@given(exact_distributions())
def test_float_and_exact_backends_agree(p):
    exact = [float(v) for v in dc.sym_coords(p).as_tuple()]
    approx = dc.sym_coords(p.to_float()).as_tuple()
    assert np.allclose(exact, approx, atol=1e-12)
