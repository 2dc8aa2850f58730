import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from pbir.penalty import HuberPenalty, huber, huber_derivative, penalty_gradient, penalty_value

images = arrays(np.float64, st.tuples(st.integers(2, 7), st.integers(2, 7)),
                elements=st.floats(-50, 50, allow_nan=False))


def brute_value(hu, pen):
    ny, nx = hu.shape
    total = 0.0
    for y in range(ny):
        for x in range(nx):
            for (dy, dx), w in pen.offsets:
                yy, xx = y + dy, x + dx
                if 0 <= yy < ny and 0 <= xx < nx:
                    total += w * float(huber(hu[y, x] - hu[yy, xx], pen.delta))
    return total


def test_huber_branches():
    assert huber(2.0, 5.0) == 2.0
    assert huber(10.0, 5.0) == 37.5
    assert huber(-10.0, 5.0) == 37.5
    assert huber_derivative(-7.0, 5.0) == -5.0


def test_constant_image():
    assert penalty_value(np.full((5, 5), 12.0)) == 0.0
    assert not penalty_gradient(np.full((5, 5), 12.0)).any()


def test_pair_examples():
    assert penalty_value(np.array([[0.0, 2.0]])) == 2.0
    assert penalty_value(np.array([[0.0, 10.0]])) == 37.5


@pytest.mark.parametrize("nb", [4, 8])
def test_saturated_spike(nb):
    img = np.zeros((5, 5))
    img[2, 2] = 1000.0
    pen = HuberPenalty(5.0, nb)
    expected = 5.0 * (4 + (4 / math.sqrt(2) if nb == 8 else 0))
    assert pen.gradient(img)[2, 2] == pytest.approx(expected)


@pytest.mark.parametrize("nb", [4, 8])
@given(img=images)
@settings(max_examples=40, deadline=None)
def test_value_matches_brute_force(nb, img):
    pen = HuberPenalty(5.0, nb)
    assert pen.value(img) == pytest.approx(brute_value(img, pen), rel=1e-12, abs=1e-9)


@pytest.mark.parametrize("nb", [4, 8])
def test_gradient_finite_difference(nb, rng):
    pen = HuberPenalty(5.0, nb)
    img = rng.normal(0, 8, (16, 16))
    g = pen.gradient(img)
    h = 1e-3
    for idx in zip(rng.integers(0, 16, 100), rng.integers(0, 16, 100)):
        e = np.zeros_like(img)
        e[idx] = h
        fd = (pen.value(img + e) - pen.value(img - e)) / (2 * h)
        assert abs(fd - g[idx]) <= 1e-4 * max(abs(g[idx]), 1.0)


def test_directional_derivative(rng):
    pen = HuberPenalty()
    img = rng.normal(0, 8, (12, 12))
    v = rng.standard_normal(img.shape)
    h = 1e-4
    fd = (pen.value(img + h * v) - pen.value(img - h * v)) / (2 * h)
    assert fd == pytest.approx(np.sum(pen.gradient(img) * v), rel=1e-4)


@given(a=arrays(np.float64, (4, 5), elements=st.floats(-100, 100)),
       b=arrays(np.float64, (4, 5), elements=st.floats(-100, 100)),
       t=st.floats(0.01, 0.99), c=st.floats(-500, 500))
@settings(max_examples=60, deadline=None)
def test_convex_and_shift_invariant(a, b, t, c):
    pen = HuberPenalty(5.0, 8)
    assert pen.value(t * a + (1 - t) * b) <= t * pen.value(a) + (1 - t) * pen.value(b) + 1e-9
    assert pen.value(a + c) == pytest.approx(pen.value(a), rel=1e-9, abs=1e-6)


def test_curvature():
    c4 = HuberPenalty(neighborhood=4).curvature((4, 5))
    assert c4[1, 1] == 8 and c4[0, 0] == 4 and c4[0, 2] == 6
    c8 = HuberPenalty(neighborhood=8).curvature((4, 5))
    assert c8[1, 1] == pytest.approx(8 + 8 / math.sqrt(2))


def test_curvature_majorizes(rng):
    # the separable bound must dominate the penalty Hessian in the quadratic region
    pen = HuberPenalty(neighborhood=8)
    img = rng.normal(0, 0.5, (6, 6))
    n = img.size
    H = np.zeros((n, n))
    h = 1e-4
    for k in range(n):
        e = np.zeros(n)
        e[k] = h
        H[:, k] = (pen.gradient(img + e.reshape(img.shape)) - pen.gradient(img - e.reshape(img.shape))).ravel() / (2 * h)
    D = np.diag(pen.curvature(img.shape).ravel())
    assert np.linalg.eigvalsh(D - H).min() > -1e-6


def test_validation():
    with pytest.raises(ValueError):
        HuberPenalty(0.0)
    with pytest.raises(ValueError):
        HuberPenalty(5.0, 6)
