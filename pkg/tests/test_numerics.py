"""Interval enclosures, the matrix exponential and the batch integrator."""

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from etc_traffic.expm import expm, expm_batch, expm_scaled
from etc_traffic.integrate import integrate_batch
from etc_traffic.interval import BoxEnclosure, box_norm_sq_range, imul, ipow
from etc_traffic.polynomial import Polynomial, parse_polynomial

X2 = ["x1", "x2"]
coef = st.floats(-5, 5, allow_nan=False)


@st.composite
def boxes(draw):
    lo = np.array([draw(st.floats(-3, 3)), draw(st.floats(-3, 3))])
    w = np.array([draw(st.floats(0, 2)), draw(st.floats(0, 2))])
    return lo, lo + w


@st.composite
def polys(draw):
    terms = draw(st.dictionaries(st.tuples(st.integers(0, 4), st.integers(0, 4)), coef,
                                 min_size=1, max_size=6))
    return Polynomial(terms, 2)


@given(polys(), boxes(), st.integers(0, 2 ** 31 - 1))
def test_box_enclosure_contains_sampled_values(p, box, seed):
    lo, hi = box
    rng = np.random.default_rng(seed)
    X = lo + (hi - lo) * rng.random((200, 2))
    X = np.vstack([X, lo, hi])
    rlo, rhi = BoxEnclosure(p)(lo[None], hi[None])
    vals = p.evaluate(X)
    assert np.all(vals >= rlo[0]) and np.all(vals <= rhi[0])


@given(boxes())
def test_enclosure_of_point_box_is_tight(box):
    p = parse_polynomial("x1^3 - 2*x1*x2 + x2^2", X2)
    lo = box[0][None]
    rlo, rhi = BoxEnclosure(p)(lo, lo)
    v = p(lo[0])
    assert rlo[0] <= v <= rhi[0]
    assert rhi[0] - rlo[0] <= 1e-12 * max(1.0, abs(v)) + 1e-250


@given(st.floats(-3, 3), st.floats(0, 3), st.floats(-3, 3), st.floats(0, 3))
def test_interval_product_contains_corners(a, wa, b, wb):
    lo, hi = imul(np.array(a), np.array(a + wa), np.array(b), np.array(b + wb))
    for x in (a, a + wa, a + wa / 2):
        for y in (b, b + wb, b + wb / 3):
            assert lo <= x * y <= hi


@given(st.floats(-3, 3), st.floats(0, 3), st.integers(0, 7))
def test_interval_power(a, w, k):
    lo, hi = ipow(np.array(a), np.array(a + w), k)
    for x in np.linspace(a, a + w, 11):
        assert lo <= x ** k <= hi


def test_norm_range_straddling_zero():
    lo, hi = box_norm_sq_range(np.array([[-1.0, 2.0]]), np.array([[3.0, 4.0]]))
    assert lo[0] <= 4.0 and hi[0] >= 25.0


@given(arrays(float, (3, 3), elements=st.floats(-4, 4)))
def test_expm_agrees_with_scipy(A):
    np.testing.assert_allclose(expm(A), scipy.linalg.expm(A), rtol=1e-10, atol=1e-10)


def test_expm_of_zero_is_identity():
    np.testing.assert_allclose(expm(np.zeros((3, 3))), np.eye(3), rtol=0, atol=1e-15)


def test_expm_rotation():
    t = 0.7
    R = expm(np.array([[0.0, t], [-t, 0.0]]))
    np.testing.assert_allclose(R, [[np.cos(t), np.sin(t)], [-np.sin(t), np.cos(t)]], atol=1e-14)


def test_expm_batch_and_scaled_shapes():
    A = np.array([[0.0, 1.0], [-2.0, -3.0]])
    s = np.array([0.0, 0.5, 3.0])
    out = expm_scaled(A, s)
    assert out.shape == (3, 2, 2)
    for k, sk in enumerate(s):
        np.testing.assert_allclose(out[k], scipy.linalg.expm(sk * A), rtol=1e-12, atol=1e-14)
    with pytest.raises(ValueError):
        expm_batch(np.zeros((2, 3)))


def rotation(y):
    return np.stack([y[:, 1], -y[:, 0]], axis=1)


def test_integrator_follows_the_circle():
    y0 = np.array([[1.0, 0.0], [0.0, 2.0]])
    t = np.array([1.0, 2.5])
    t_stop, y, fired = integrate_batch(rotation, y0, t)
    assert not fired.any()
    np.testing.assert_array_equal(t_stop, t)
    np.testing.assert_allclose(y[0], [np.cos(1.0), -np.sin(1.0)], atol=1e-8)
    np.testing.assert_allclose(y[1], [2 * np.sin(2.5), 2 * np.cos(2.5)], atol=1e-8)


def test_integrator_locates_events():
    # clockwise from (0, 1): x1 = sin t reaches 0.5 at t = asin(0.5)
    y0 = np.array([[0.0, 1.0]])
    event = lambda y: y[:, 0] - 0.5
    t_stop, y, fired = integrate_batch(rotation, y0, 5.0, event=event, event_tol=1e-13)
    assert fired[0]
    assert t_stop[0] == pytest.approx(np.arcsin(0.5), abs=1e-9)
    assert y[0, 0] == pytest.approx(0.5, abs=1e-9)


def test_integrator_rejects_flat_input():
    with pytest.raises(ValueError):
        integrate_batch(rotation, np.array([1.0, 0.0]), 1.0)
