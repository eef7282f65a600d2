import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from reflnerf.losses import (EDGE_WEIGHT, PatchTooSmall, edge_loss, photometric_loss,
                             sobel_gradients, stencil_mask, total_loss)

RAMP = np.tile(np.arange(3.0), (3, 1))  # rows (0, 1, 2)


def hand_sobel_center(p):
    """Direct 3x3 weighted sums at the single interior pixel."""
    gx = (p[0, 2] + 2 * p[1, 2] + p[2, 2]) - (p[0, 0] + 2 * p[1, 0] + p[2, 0])
    gy = (p[2, 0] + 2 * p[2, 1] + p[2, 2]) - (p[0, 0] + 2 * p[0, 1] + p[0, 2])
    return abs(gx) + abs(gy)


def test_sobel_constant_patch():
    assert np.all(sobel_gradients(np.full((5, 6, 3), 0.4)) == 0)


def test_sobel_ramp_and_transpose():
    assert hand_sobel_center(RAMP) == 8
    assert sobel_gradients(RAMP)[0, 0] == 8
    assert sobel_gradients(RAMP.T)[0, 0] == 8


def test_sobel_too_small():
    with pytest.raises(PatchTooSmall):
        sobel_gradients(np.zeros((2, 5, 3)))
    with pytest.raises(PatchTooSmall):
        edge_loss(np.zeros((5, 2)), np.zeros((5, 2)))


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_sobel_matches_hand_window(seed):
    img = np.random.default_rng(seed).random((6, 7))
    got = sobel_gradients(img)
    for i in range(4):
        for j in range(5):
            assert got[i, j] == pytest.approx(hand_sobel_center(img[i:i + 3, j:j + 3]), abs=1e-12)


def test_edge_loss_constant_reflection_is_zero():
    prim = np.random.default_rng(0).random((8, 8, 3))
    assert edge_loss(prim, np.full((8, 8, 3), 0.3)) == 0.0


def test_edge_loss_equal_ramps():
    assert edge_loss(RAMP, RAMP) == pytest.approx(64.0)


def test_edge_loss_gradient_and_detachment():
    rng = np.random.default_rng(1)
    prim, refl = rng.random((6, 6, 3)), rng.random((6, 6, 3))
    val, grad = edge_loss(prim, refl, with_grad=True)
    assert grad.shape == prim.shape
    h = 1e-6
    for idx in [(0, 0, 0), (2, 3, 1), (5, 5, 2), (3, 1, 0)]:
        p = prim.copy()
        p[idx] += h
        up = edge_loss(p, refl)
        p[idx] -= 2 * h
        dn = edge_loss(p, refl)
        fd = (up - dn) / (2 * h)
        assert abs(fd - grad[idx]) <= 1e-3 * max(abs(fd), 1e-8)
    # changing the reflected patch changes the value, never the gradient's shape or target
    val2, grad2 = edge_loss(prim, refl * 2, with_grad=True)
    assert val2 == pytest.approx(2 * val)
    assert grad2.shape == prim.shape


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2 ** 31), st.floats(0.01, 10))
def test_edge_loss_nonnegative_and_linear_in_primary(seed, scale):
    rng = np.random.default_rng(seed)
    prim, refl = rng.random((8, 8, 3)), rng.random((8, 8, 3))
    v = edge_loss(prim, refl)
    assert v >= 0
    assert edge_loss(scale * prim, refl) == pytest.approx(scale * v, rel=1e-10)


def test_stencil_mask():
    valid = np.ones((5, 6), bool)
    valid[0, 5] = False
    m = stencil_mask(valid)
    assert m.shape == (3, 4)
    assert not m[0, 3] and m.sum() == 11


def test_edge_loss_mask_drops_undefined_reflection():
    rng = np.random.default_rng(3)
    prim, refl = rng.random((6, 6, 3)), rng.random((6, 6, 3))
    full = edge_loss(prim, refl)
    assert edge_loss(prim, refl, mask=np.ones((4, 4), bool)) == full
    assert edge_loss(prim, refl, mask=np.zeros((4, 4), bool)) == 0.0
    mask = np.zeros((4, 4), bool)
    mask[1:3, 1:3] = True
    val, grad = edge_loss(prim, refl, with_grad=True, mask=mask)
    ref_mag = sobel_gradients(refl) * mask[..., None]
    assert val == pytest.approx(np.sum(sobel_gradients(prim) * ref_mag) / 48)
    h = 1e-6
    p = prim.copy()
    p[2, 2, 1] += h
    up = edge_loss(p, refl, mask=mask)
    p[2, 2, 1] -= 2 * h
    fd = (up - edge_loss(p, refl, mask=mask)) / (2 * h)
    assert fd == pytest.approx(grad[2, 2, 1], rel=1e-3)


def test_photometric_cases():
    assert photometric_loss(np.ones((4, 3)), np.ones((4, 3))) == 0
    assert photometric_loss(np.array([[1.0, 0, 0]]), np.zeros((1, 3))) == pytest.approx(1 / 3)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_photometric_matches_two_pass_mean_and_is_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    c, g = rng.random((37, 3)), rng.random((37, 3))
    total = 0.0
    for i in range(37):
        for k in range(3):
            total += (c[i, k] - g[i, k]) ** 2
    assert photometric_loss(c, g) == pytest.approx(total / 111, abs=1e-7)
    perm = rng.permutation(37)
    assert photometric_loss(c[perm], g[perm]) == pytest.approx(photometric_loss(c, g), rel=1e-12)


def test_photometric_gradient():
    rng = np.random.default_rng(2)
    c, g = rng.random((5, 3)), rng.random((5, 3))
    _, grad = photometric_loss(c, g, with_grad=True)
    np.testing.assert_allclose(grad, 2 * (c - g) / 15)


def test_total_loss_weighting():
    assert EDGE_WEIGHT == 0.5
    assert total_loss(1.0, 2.0, EDGE_WEIGHT) == 2.0
    assert total_loss(1.0, 2.0, 0.0) == 1.0
    assert total_loss(1.0, 2.0, 0.25) == 1.5
    with pytest.raises(ValueError):
        total_loss(1.0, 2.0, -1.0)
