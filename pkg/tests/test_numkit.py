import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fedsim.errors import DimensionMismatchError
from fedsim.models import Batch, Family, Model
from fedsim.numkit import RngStream, as_params, fd_gradient, lin_comb, norm2

finite_vec = arrays(
    np.float64,
    st.integers(1, 12),
    elements=st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False),
)


def test_lin_comb_identity():
    out = lin_comb(1.0, np.array([1.0, 2.0]), 0.0, np.array([9.0, 9.0]))
    assert np.array_equal(out, [1.0, 2.0])


def test_lin_comb_weight_decay_step_values():
    out = lin_comb(0.99, np.array([1.0, 1.0]), -0.1, np.array([1.0, 0.0]))
    assert np.array_equal(out, [0.89, 0.99])


def test_lin_comb_cancellation():
    v = np.array([3.0, 4.0])
    assert np.array_equal(lin_comb(1.0, v, -1.0, v), [0.0, 0.0])


def test_lin_comb_dim_mismatch():
    with pytest.raises(DimensionMismatchError):
        lin_comb(1.0, np.zeros(3), 1.0, np.zeros(4))


def test_norm2_examples():
    assert norm2(np.array([3.0, 4.0])) == 5.0
    assert norm2(np.zeros(3)) == 0.0
    assert norm2(np.ones(4)) == 2.0


@given(finite_vec, st.floats(-100, 100), st.floats(-100, 100))
@settings(max_examples=60, deadline=None)
def test_lin_comb_finite_and_linear(v, a, b):
    out = lin_comb(a, v, b, v)
    assert np.all(np.isfinite(out))
    assert np.allclose(out, (a + b) * v, rtol=1e-12, atol=1e-9)


@given(finite_vec)
@settings(max_examples=60, deadline=None)
def test_norm2_zero_iff_zero_vector(v):
    n = norm2(v)
    assert np.isfinite(n) and n >= 0.0
    if np.all(v == 0.0):
        assert n == 0.0
    else:
        # squared magnitudes below ~1e-154 underflow, so only claim
        # positivity when at least one entry is comfortably above that
        if np.max(np.abs(v)) > 1e-150:
            assert n > 0.0


def test_as_params_rejects_bad_inputs():
    with pytest.raises(ValueError):
        as_params([])
    with pytest.raises(ValueError):
        as_params([1.0, np.nan])
    with pytest.raises(DimensionMismatchError):
        as_params(np.zeros((2, 2)))


def test_rng_stream_replay_and_independence():
    a = RngStream(42).child(3, 7).generator().normal(size=5)
    b = RngStream(42).child(3, 7).generator().normal(size=5)
    assert np.array_equal(a, b)
    c = RngStream(42).child(3, 8).generator().normal(size=5)
    d = RngStream(43).child(3, 7).generator().normal(size=5)
    assert not np.array_equal(a, c)
    assert not np.array_equal(a, d)


def test_rng_stream_children_compose():
    assert RngStream(1).child(2).child(3).path == (2, 3)
    assert RngStream(1).child(2, 3).path == (2, 3)


def test_fd_gradient_quadratic():
    # f(w) = mean (w x - y)^2 with x=1, y=0 is w^2; f'(3) = 6.
    model = Model(Family.LINEAR_REGRESSION, d_in=1)
    batch = Batch(np.array([[1.0]]), np.array([0.0]))
    params = np.array([3.0, 0.0])  # weight 3, bias 0
    g = fd_gradient(model, params, batch)
    assert g[0] == pytest.approx(6.0, abs=1e-8)


def test_fd_gradient_flat_region_near_zero():
    model = Model(Family.LINEAR_REGRESSION, d_in=2)
    batch = Batch(np.zeros((3, 2)), np.zeros(3))
    g = fd_gradient(model, np.array([5.0, -2.0, 0.0]), batch)
    # features are all zero, so only the bias coordinate has slope
    assert abs(g[0]) < 1e-10 and abs(g[1]) < 1e-10
