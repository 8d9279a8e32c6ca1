"""Shared hypothesis strategies."""

from fractions import Fraction

import numpy as np
from hypothesis import strategies as st

from trianglescope.dist_core import OutcomeDistribution


@st.composite
def exact_distributions(draw, n=None, max_n=4):
    n = n or draw(st.integers(1, max_n))
    weights = draw(st.lists(st.integers(0, 9), min_size=n ** 3, max_size=n ** 3))
    if sum(weights) == 0:
        weights[0] = 1
    total = sum(weights)
    arr = np.array([Fraction(w, total) for w in weights], dtype=object).reshape(n, n, n)
    return OutcomeDistribution(arr)


@st.composite
def fractions_in_unit(draw, denominator=24):
    return Fraction(draw(st.integers(0, denominator)), denominator)
