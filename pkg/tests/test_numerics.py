import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from supcon_ehr.numerics import (
    DegenerateEmbeddingError,
    cosine_sim,
    log_sigmoid,
    logsumexp,
    sigmoid,
    softplus,
)

finite = st.floats(-50, 50, allow_nan=False)


def test_sigmoid_values():
    assert sigmoid(0.0) == 0.5
    # reference from arbitrary-precision evaluation
    assert sigmoid(1.0) == pytest.approx(0.7310585786300049, abs=1e-12)


def test_sigmoid_saturates_without_overflow():
    with np.errstate(over="raise", invalid="raise"):
        lo = sigmoid(-1000.0)
        hi = sigmoid(1000.0)
        huge = sigmoid(-1e308)
    # e^-1000 is below the smallest subnormal double, so the value rounds to 0
    assert 0.0 <= lo < 1e-300
    assert hi == 1.0
    assert huge == 0.0


def test_log_sigmoid_values():
    assert log_sigmoid(0.0) == pytest.approx(-math.log(2), abs=1e-12)
    assert log_sigmoid(-1000.0) == pytest.approx(-1000.0, abs=1e-9)
    # arbitrary-precision reference: -log(1 + e^-2.5)
    assert log_sigmoid(2.5) == pytest.approx(-0.07888973429254962, abs=1e-12)


def test_log_sigmoid_finite_where_naive_fails():
    with np.errstate(all="ignore"):
        naive = np.log(1.0 / (1.0 + np.exp(800.0)))
    assert not np.isfinite(naive)
    assert log_sigmoid(-800.0) == pytest.approx(-800.0)


def test_softplus_large():
    assert softplus(1000.0) == 1000.0
    assert softplus(-1000.0) == 0.0


def test_logsumexp_examples():
    assert logsumexp([0.0, 0.0]) == pytest.approx(math.log(2))
    assert logsumexp([3.25]) == 3.25
    assert logsumexp([1000.0] * 3) == pytest.approx(1000 + math.log(3))
    with pytest.raises(ValueError):
        logsumexp([])


def test_cosine_examples():
    v = np.array([0.3, -1.2, 2.0])
    assert cosine_sim(v, v) == 1.0
    assert cosine_sim([1.0, 0.0], [0.0, 1.0]) == 0.0
    assert cosine_sim([1.0, 1.0], [1.0, 0.0]) == pytest.approx(1 / math.sqrt(2), abs=1e-12)
    with pytest.raises(DegenerateEmbeddingError):
        cosine_sim([0.0, 0.0], [1.0, 0.0])


@given(x=finite)
def test_sigmoid_symmetry(x):
    assert abs(sigmoid(x) + sigmoid(-x) - 1.0) < 1e-12


@given(x=st.floats(-30, 30))
def test_log_sigmoid_matches_composition(x):
    assert abs(log_sigmoid(x) - math.log(sigmoid(x))) < 1e-9


@given(xs=st.lists(finite, min_size=1, max_size=20), c=st.floats(-100, 100))
def test_logsumexp_shift(xs, c):
    shifted = logsumexp(np.array(xs) + c)
    assert abs(shifted - (logsumexp(xs) + c)) < 1e-9


@settings(max_examples=200)
@given(
    a=st.lists(st.floats(-10, 10), min_size=3, max_size=3),
    b=st.lists(st.floats(-10, 10), min_size=3, max_size=3),
    s=st.floats(1e-3, 1e3),
)
def test_cosine_scale_invariance(a, b, s):
    a, b = np.array(a), np.array(b)
    if np.linalg.norm(a) < 1e-3 or np.linalg.norm(b) < 1e-3:
        return
    assert abs(cosine_sim(s * a, b) - cosine_sim(a, b)) < 1e-12
    assert -1.0 <= cosine_sim(a, b) <= 1.0
