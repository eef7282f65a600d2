import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from reflnerf.field import AttenuationField, VoxelRadianceField, softplus_inv
from reflnerf.geometry import PlaneSegment, Ray
from reflnerf.optim import GradientBuffers
from reflnerf.renderer import (InvalidRange, RenderSettings, SceneModel, composite_weights,
                               render_image, render_ray, render_rays, render_rays_backward,
                               render_reflection_aware, stratified_samples)
from reflnerf.scenes import Camera

LO, HI = -4 * np.ones(3), 4 * np.ones(3)
BIG = 200.0  # sigmoid(C0 * BIG) is 1 to double precision


def const_field(sigma=0.0, color=(0.5, 0.5, 0.5), res=4):
    f = VoxelRadianceField((res,) * 3, LO, HI)
    f.data[..., 0] = softplus_inv(sigma) if sigma > 0 else -200.0
    for c in range(3):
        f.color_coeffs[..., c, 0] = np.log(color[c] / (1 - color[c])) / 0.28209479177387814 \
            if 0 < color[c] < 1 else (BIG if color[c] >= 1 else -BIG)
    return f


def att_field(value=0.5, res=4):
    a = AttenuationField((res,) * 3, LO, HI)
    a.data[..., 0] = -BIG * 10 if value == 0 else np.log(value / (1 - value)) / 0.28209479177387814
    return a


def random_model(seed, n_planes=2):
    rng = np.random.default_rng(seed)
    f = VoxelRadianceField((6, 6, 6), LO, HI)
    f.data[...] = rng.normal(0, 1, f.data.shape)
    a = AttenuationField((6, 6, 6), LO, HI)
    a.data[...] = rng.normal(0, 1, a.data.shape)
    planes = []
    for _ in range(n_planes):
        n = rng.normal(size=3)
        n /= np.linalg.norm(n)
        up = np.cross(n, rng.normal(size=3))
        planes.append(PlaneSegment(rng.uniform(-1.5, 1.5, 3), n, up / np.linalg.norm(up), 3, 3))
    return SceneModel(f, a, planes)


def random_rays(rng, n):
    d = rng.normal(size=(n, 3))
    return rng.uniform(-1, 1, (n, 3)), d / np.linalg.norm(d, axis=1, keepdims=True)


# --- sampling and weights ----------------------------------------------------

def test_stratified_bin_centers():
    s = stratified_samples(0.0, 1.0, 4)
    np.testing.assert_allclose(s.t_values, [0.125, 0.375, 0.625, 0.875])
    np.testing.assert_allclose(s.deltas, [0.25, 0.25, 0.25, 0.125])


def test_single_bin_is_midpoint():
    np.testing.assert_allclose(stratified_samples(2.0, 5.0, 1).t_values, [3.5])


def test_jittered_samples_are_locked():
    s = stratified_samples(1.0, 3.0, 5, np.random.default_rng(123))
    np.testing.assert_array_equal(s.t_values, [1.2729407452992574, 1.421528407520889, 1.8881439491090446,
                                               2.273748724279468, 2.6703623604340123])
    assert np.all(np.diff(s.t_values) > 0) and np.all(s.deltas >= 0)


def test_invalid_range():
    with pytest.raises(InvalidRange):
        stratified_samples(2.0, 1.0, 4)


@pytest.mark.parametrize("sig,dlt,w,t_end", [
    ([0.0], [0.7], [0.0], 1.0),
    ([1.0], [1.0], [1 - math.exp(-1)], math.exp(-1)),
    ([1.0, 1.0], [1.0, 1.0], [1 - math.exp(-1), math.exp(-1) * (1 - math.exp(-1))], math.exp(-2)),
])
def test_composite_weights_closed_form(sig, dlt, w, t_end):
    got_w, got_t = composite_weights(sig, dlt)
    np.testing.assert_allclose(got_w, w, atol=1e-15)
    assert got_t == pytest.approx(t_end, abs=1e-15)
    if len(sig) == 1 and sig[0] == 1:
        assert got_w[0] == pytest.approx(0.63212, abs=1e-5) and got_t == pytest.approx(0.36788, abs=1e-5)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2 ** 31), st.integers(1, 64))
def test_weights_normalize_and_transmittance_decreases(seed, K):
    rng = np.random.default_rng(seed)
    sig = rng.exponential(2.0, (50, K)) * (rng.random((50, K)) < 0.7)
    dlt = rng.uniform(0, 0.5, (50, K))
    w, t_end = composite_weights(sig, dlt)
    np.testing.assert_allclose(w.sum(-1) + t_end, 1.0, atol=1e-6)
    trans = np.exp(-(np.cumsum(sig * dlt, -1) - sig * dlt))
    assert np.all(np.diff(trans, axis=-1) <= 1e-15)


# --- single rays -------------------------------------------------------------

def test_empty_field_ray():
    color, depth, t_end = render_ray(const_field(0.0), Ray((0, 0, 0), (0, 0, -1)), 0.0, 3.0, 32)
    np.testing.assert_allclose(color, 0, atol=1e-12)
    assert depth == pytest.approx(3.0) and t_end == pytest.approx(1.0)


def test_opaque_red_slab():
    f = const_field(1e4, color=(1.0, 1e-9, 1e-9))
    color, depth, t_end = render_ray(f, Ray((0, 0, 0), (0, 0, -1)), 0.0, 3.0, 30)
    np.testing.assert_allclose(color, [1, 0, 0], atol=1e-6)
    assert depth == pytest.approx(0.05, abs=1e-6) and t_end < 1e-12


@pytest.mark.parametrize("K,tol", [(64, 2e-2), (256, 5e-3)])
def test_homogeneous_medium_matches_analytic(K, tol):
    f = const_field(1.0, color=(1.0, 1.0, 1.0))
    color, _, _ = render_ray(f, Ray((0, 0, 0), (0, 0, -1)), 0.0, 2.0, K)
    np.testing.assert_allclose(color, 1 - math.exp(-2), atol=tol)


def test_no_planes_matches_plain_render():
    f = random_model(0).field
    ray = Ray((0.1, 0.2, 0.3), (0, 0.6, -0.8))
    b = render_reflection_aware(f, att_field(), [], ray, 0.05, 3.0, 48)
    color, depth, _ = render_ray(f, ray, 0.05, 3.0, 48)
    np.testing.assert_allclose(b.primary, color, atol=1e-12)
    np.testing.assert_array_equal(b.composite, b.primary)
    np.testing.assert_array_equal(b.reflected, 0)
    assert b.depth == pytest.approx(depth)


def test_opaque_reflection_with_half_attenuation():
    # primary marches through empty space; the mirrored ray meets an opaque red box
    f = VoxelRadianceField((41, 41, 41), LO, HI)
    f.data[..., 0] = -200.0
    f.color_coeffs[..., 0, 0] = BIG
    f.color_coeffs[..., 1:, 0] = -BIG
    zs = np.linspace(LO[2], HI[2], 41)
    f.data[:, :, zs >= 2.0, 0] = softplus_inv(1e4)
    mirror = PlaneSegment((0, 0, -1), (0, 0, 1), (0, 1, 0), 4, 4)
    b = render_reflection_aware(f, att_field(0.5), [mirror], Ray((0, 0, 0), (0, 0, -1)), 0.05, 1.5, 64,
                                far_reflect=4.0)
    assert b.transmittance == pytest.approx(1.0)
    np.testing.assert_allclose(b.composite, [0.5, 0, 0], atol=1e-6)
    np.testing.assert_allclose(b.primary, 0, atol=1e-12)


def test_composite_arithmetic():
    primary, trans, ca = np.array([0.2, 0.2, 0.2]), 0.5, np.array([0.4, 0.0, 0.0])
    np.testing.assert_allclose(primary + trans * ca, [0.4, 0.2, 0.2])


# --- images ------------------------------------------------------------------

def test_one_pixel_image_is_central_ray():
    m = random_model(3)
    cam = Camera((0, 0, 1.0), (0, 0, 0), (0, 1, 0), 60, 1, 1)
    img = render_image(m.field, m.att, m.planes, cam, K=32)
    b = render_reflection_aware(m.field, m.att, m.planes, Ray((0, 0, 1.0), (0, 0, -1)), 0.05, 6.0, 32)
    np.testing.assert_allclose(img.composite[0, 0], b.composite, atol=1e-12)


def test_empty_field_image_is_black():
    cam = Camera((0, 0, 1.0), (0, 0, 0), (0, 1, 0), 60, 5, 4)
    s = RenderSettings(far=3.0, n_samples=16, n_reflect_samples=16)
    img = render_image(const_field(0.0), att_field(), [], cam, settings=s)
    assert img.composite.shape == (4, 5, 3)
    np.testing.assert_allclose(img.composite, 0, atol=1e-12)
    np.testing.assert_allclose(img.depth, 3.0)


# --- bundle invariants -------------------------------------------------------

@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_bundle_invariants(seed):
    m = random_model(seed)
    rng = np.random.default_rng(seed)
    o, d = random_rays(rng, 64)
    s = RenderSettings(far=5.0, n_samples=24, n_reflect_samples=24)
    b, _ = render_rays(m, o, d, s)
    np.testing.assert_array_equal(b.composite, b.primary + b.transmittance[:, None] * b.attenuated_reflection)
    assert np.all((b.transmittance >= 0) & (b.transmittance <= 1))
    assert np.all(b.attenuated_reflection <= b.reflected + 1e-15)
    assert np.all(b.attenuation <= 1 + 1e-6)
    miss = ~b.hit
    np.testing.assert_array_equal(b.composite[miss], b.primary[miss])
    np.testing.assert_array_equal(b.reflected[miss], 0)


def test_zero_field_zeroes_both_branches():
    m = random_model(5)
    m.field.data[..., 0] = -200.0
    o, d = random_rays(np.random.default_rng(5), 200)
    b, _ = render_rays(m, o, d, RenderSettings(far=5.0, n_samples=16, n_reflect_samples=16))
    assert b.hit.any()
    np.testing.assert_allclose(b.primary, 0, atol=1e-12)
    np.testing.assert_allclose(b.reflected, 0, atol=1e-12)


def test_zero_attenuation_gives_primary():
    m = random_model(6)
    m.att.data[...] = 0.0
    m.att.data[..., 0] = -1e4
    o, d = random_rays(np.random.default_rng(6), 200)
    b, _ = render_rays(m, o, d, RenderSettings(far=5.0, n_samples=16, n_reflect_samples=16))
    assert b.hit.any()
    np.testing.assert_array_equal(b.composite, b.primary)


def test_reflections_off_ignores_planes():
    m = random_model(8)
    o, d = random_rays(np.random.default_rng(8), 100)
    b, _ = render_rays(m, o, d, RenderSettings(far=5.0, n_samples=16, reflections=False))
    np.testing.assert_array_equal(b.composite, b.primary)


def test_sample_sum_normalizes_on_many_rays():
    m = random_model(9)
    o, d = random_rays(np.random.default_rng(9), 10_000)
    b, cache = render_rays(m, o, d, RenderSettings(far=5.0, n_samples=32, reflections=False), keep=True)
    np.testing.assert_allclose(cache.primary.weights.sum(1) + cache.primary.t_end, 1.0, atol=1e-6)


# --- adjoints ----------------------------------------------------------------

def test_zero_density_gives_zero_color_gradient():
    m = SceneModel(const_field(0.0), att_field(), [])
    o, d = random_rays(np.random.default_rng(0), 30)
    s = RenderSettings(far=3.0, n_samples=8)
    m.field.data[..., 0] = -800.0
    _, cache = render_rays(m, o, d, s, keep=True)
    g = GradientBuffers.zeros_like(m)
    render_rays_backward(m, cache, np.ones((30, 3)), g)
    np.testing.assert_array_equal(g.field[:, 1:], 0)


def test_single_sample_density_gradient_closed_form():
    raw, color_v, near, far = 0.3, 0.7, 0.5, 1.5
    f = const_field(1.0, color=(color_v,) * 3)
    f.data[..., 0] = raw
    m = SceneModel(f, att_field(), [])
    gt = np.array([0.1, 0.2, 0.9])
    o, d = np.zeros((1, 3)), np.array([[0.0, 0.0, -1.0]])
    s = RenderSettings(near=near, far=far, n_samples=1)
    b, cache = render_rays(m, o, d, s, keep=True)
    g = GradientBuffers.zeros_like(m)
    render_rays_backward(m, cache, 2 * (b.composite - gt) / 3, g)
    # hand derivative of mean_c (w c - gt_c)^2 with w = 1 - exp(-softplus(raw) delta)
    sigma = math.log1p(math.exp(raw))
    delta = far - (near + far) / 2
    w = 1 - math.exp(-sigma * delta)
    dsig = 1 / (1 + math.exp(-raw))
    expected = sum(2 * (w * color_v - gt[c]) / 3 * color_v for c in range(3)) * delta * math.exp(-sigma * delta) * dsig
    assert g.field[:, 0].sum() == pytest.approx(expected, rel=1e-10)
