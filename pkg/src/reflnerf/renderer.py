"""Volume rendering of primary and mirrored rays and their composite.

The batched path (:func:`render_rays` / :func:`render_rays_backward`) is
what training uses; the single-ray helpers wrap it.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from .field import (AttenuationField, VoxelRadianceField, radiance_from_raw, sh_basis,
                    sh_basis_grad, sigmoid)
from .geometry import EPS_OFFSET, PlaneSegment, Ray, intersect_planes_batch


class InvalidRange(ValueError):
    pass


@dataclass
class RaySamples:
    t_values: np.ndarray
    deltas: np.ndarray


@dataclass
class RenderSettings:
    near: float = 0.05
    far: float = 6.0
    n_samples: int = 128
    n_reflect_samples: int = 128
    far_reflect: float | None = None
    reflections: bool = True
    offset: float = EPS_OFFSET
    chunk: int = 4096

    @property
    def reflect_far(self) -> float:
        return self.far if self.far_reflect is None else self.far_reflect


@dataclass
class SceneModel:
    """Everything the renderer reads: one radiance field, one attenuation field, the reflectors."""

    field: VoxelRadianceField
    att: AttenuationField
    planes: list[PlaneSegment] = dc_field(default_factory=list)

    def copy(self) -> "SceneModel":
        return SceneModel(self.field.copy(), self.att.copy(), [p.copy() for p in self.planes])


@dataclass
class RenderBundle:
    primary: np.ndarray
    reflected: np.ndarray
    attenuation: np.ndarray
    attenuated_reflection: np.ndarray
    transmittance: np.ndarray
    composite: np.ndarray
    depth: np.ndarray
    hit_t: np.ndarray
    plane_index: np.ndarray

    @property
    def hit(self) -> np.ndarray:
        return self.plane_index >= 0

    def reshape(self, *shape) -> "RenderBundle":
        out = {}
        for name, arr in self.__dict__.items():
            tail = arr.shape[1:]
            out[name] = arr.reshape(tuple(shape) + tail)
        return RenderBundle(**out)

    def row(self, i) -> "RenderBundle":
        return RenderBundle(**{k: v[i] for k, v in self.__dict__.items()})

    @staticmethod
    def concat(parts: list["RenderBundle"]) -> "RenderBundle":
        keys = parts[0].__dict__.keys()
        return RenderBundle(**{k: np.concatenate([getattr(p, k) for p in parts]) for k in keys})


def stratified_samples(near: float, far: float, K: int, jitter=None) -> RaySamples:
    t, d = stratified_batch(1, near, far, K, jitter)
    return RaySamples(t[0], d[0])


def stratified_batch(n_rays: int, near: float, far: float, K: int, rng=None):
    """K bins on [near, far]; sample at bin centers, or uniformly inside each bin with ``rng``."""
    if not far > near or near < 0:
        raise InvalidRange(f"need 0 <= near < far, got near={near} far={far}")
    if K < 1:
        raise InvalidRange("K must be >= 1")
    width = (far - near) / K
    base = near + width * np.arange(K)
    if rng is None:
        t = np.broadcast_to(base + 0.5 * width, (n_rays, K)).copy()
    else:
        t = base + width * rng.random((n_rays, K))
    deltas = np.empty_like(t)
    deltas[:, :-1] = np.diff(t, axis=1)
    deltas[:, -1] = far - t[:, -1]
    return t, deltas


def composite_weights(sigmas, deltas):
    """Quadrature weights ``T_k (1 - exp(-sigma_k delta_k))`` and the leftover transmittance."""
    sigmas = np.asarray(sigmas, dtype=np.float64)
    od = sigmas * np.asarray(deltas, dtype=np.float64)
    cum = np.cumsum(od, axis=-1)
    trans = np.exp(-(cum - od))
    weights = trans * -np.expm1(-od)
    return weights, np.exp(-cum[..., -1])


@dataclass
class _March:
    """Forward state of one batch of marched rays, retained for the adjoint pass."""

    t: np.ndarray
    deltas: np.ndarray
    lookup: object
    sh: np.ndarray
    sigma: np.ndarray
    color: np.ndarray
    trans: np.ndarray
    weights: np.ndarray
    t_end: np.ndarray


def _march(fld: VoxelRadianceField, origins, dirs, t, deltas, spatial=False):
    n, K = t.shape
    pts = origins[:, None, :] + t[..., None] * dirs[:, None, :]
    lk = fld.lookup(pts.reshape(-1, 3), spatial=spatial)
    sh = sh_basis(dirs)
    sigma, color, _ = radiance_from_raw(lk.raw, np.repeat(sh, K, axis=0))
    sigma = sigma.reshape(n, K)
    color = color.reshape(n, K, 3)
    od = sigma * deltas
    cum = np.cumsum(od, axis=1)
    trans = np.exp(-(cum - od))
    weights = trans * -np.expm1(-od)
    return _March(t, deltas, lk, sh, sigma, color, trans, weights, np.exp(-cum[:, -1]))


@dataclass
class _ReflectState:
    rows: np.ndarray
    plane_index: np.ndarray
    t_hit: np.ndarray
    x: np.ndarray
    d_ref: np.ndarray
    partial: np.ndarray
    t_hit_trans: np.ndarray
    march: _March
    att_lookup: object
    atten: np.ndarray
    atten_color: np.ndarray


@dataclass
class RenderCache:
    origins: np.ndarray
    dirs: np.ndarray
    primary: _March
    reflect: _ReflectState | None
    bundle: RenderBundle


def _truncated_optical_depth(sigma, t, deltas, t_hit):
    """Optical depth of the primary quadrature up to ``t_hit``; sample k covers [t_k, t_k + delta_k]."""
    partial = np.clip(t_hit[:, None] - t, 0.0, deltas)
    return np.sum(sigma * partial, axis=1), partial


def render_rays(model: SceneModel, origins, dirs, settings: RenderSettings, rng=None,
                keep: bool = False):
    """Render N rays. Returns ``(bundle, cache)``; ``cache`` is None unless ``keep``."""
    origins = np.ascontiguousarray(origins, dtype=np.float64).reshape(-1, 3)
    dirs = np.ascontiguousarray(dirs, dtype=np.float64).reshape(-1, 3)
    n = len(origins)
    t, deltas = stratified_batch(n, settings.near, settings.far, settings.n_samples, rng)
    prim = _march(model.field, origins, dirs, t, deltas)
    primary = np.einsum("rk,rkc->rc", prim.weights, prim.color)
    depth = np.sum(prim.weights * t, axis=1) + prim.t_end * settings.far

    reflected = np.zeros((n, 3))
    attenuation = np.zeros(n)
    att_refl = np.zeros((n, 3))
    trans_hit = np.zeros(n)
    hit_t = np.full(n, np.inf)
    plane_index = np.full(n, -1, dtype=np.int64)
    state = None
    if settings.reflections and model.planes:
        hit_t, plane_index = intersect_planes_batch(origins, dirs, model.planes)
        rows = np.nonzero(plane_index >= 0)[0]
        if len(rows):
            state = _reflect_forward(model, origins, dirs, prim, rows, hit_t[rows],
                                     plane_index[rows], settings, rng)
            reflected[rows] = np.einsum("rk,rkc->rc", state.march.weights, state.march.color)
            attenuation[rows] = np.sum(state.march.weights * state.atten, axis=1)
            att_refl[rows] = np.einsum("rk,rkc->rc", state.march.weights, state.atten_color)
            trans_hit[rows] = state.t_hit_trans
    composite = primary + trans_hit[:, None] * att_refl
    bundle = RenderBundle(primary, reflected, attenuation, att_refl, trans_hit, composite,
                          depth, hit_t, plane_index)
    cache = RenderCache(origins, dirs, prim, state, bundle) if keep else None
    return bundle, cache


def _reflect_forward(model, origins, dirs, prim, rows, t_hit, pidx, settings, rng):
    normals = np.stack([model.planes[i].normal for i in pidx])
    d = dirs[rows]
    x = origins[rows] + t_hit[:, None] * d
    # quadratic in n, so the sign of the stored normal does not matter
    d_ref = d - 2.0 * np.sum(d * normals, axis=1, keepdims=True) * normals
    tau, partial = _truncated_optical_depth(prim.sigma[rows], prim.t[rows], prim.deltas[rows], t_hit)
    s, ds = stratified_batch(len(rows), 0.0, settings.reflect_far, settings.n_reflect_samples, rng)
    s = s + settings.offset
    march = _march(model.field, x, d_ref, s, ds, spatial=True)
    K = s.shape[1]
    pts = x[:, None, :] + s[..., None] * d_ref[:, None, :]
    alk = model.att.lookup(pts.reshape(-1, 3), spatial=True)
    a_raw = np.einsum("sl,sl->s", alk.raw, np.repeat(march.sh, K, axis=0))
    atten = sigmoid(a_raw).reshape(len(rows), K)
    return _ReflectState(rows, pidx, t_hit, x, d_ref, partial, np.exp(-tau), march, alk, atten,
                         atten[..., None] * march.color)


def _quadrature_backward(m: _March, g_weighted: np.ndarray) -> np.ndarray:
    """d(sum_k w_k q_k)/d sigma_k given g_k = q_k . dOut."""
    contrib = m.weights * g_weighted
    after = np.sum(contrib, axis=1, keepdims=True) - np.cumsum(contrib, axis=1)
    trans_next = m.trans * np.exp(-m.sigma * m.deltas)
    return m.deltas * (trans_next * g_weighted - after)


def _radiance_graw(m: _March, d_sigma, d_color):
    """Per-sample gradients w.r.t. the 13 interpolated radiance channels."""
    n, K = m.sigma.shape
    graw = np.empty((n * K, 13))
    graw[:, 0] = (d_sigma * sigmoid(m.lookup.raw[:, 0].reshape(n, K))).reshape(-1)
    dcr = (d_color * m.color * (1.0 - m.color)).reshape(-1, 3)
    sh = np.repeat(m.sh, K, axis=0)
    graw[:, 1:] = (dcr[:, :, None] * sh[:, None, :]).reshape(-1, 12)
    return graw, dcr


def render_rays_backward(model: SceneModel, cache: RenderCache, d_composite, grads,
                         d_primary=None) -> None:
    """Accumulate adjoints of a scalar loss into ``grads``.

    ``d_composite`` is dL/dC^comp per ray; ``d_primary`` optionally adds a
    gradient that reaches the primary color only (the edge term).  ``grads``
    needs ``field`` and ``att`` flat arrays and a ``planes`` list of dicts.
    """
    prim = cache.primary
    d_comp = np.asarray(d_composite, dtype=np.float64)
    dC = d_comp if d_primary is None else d_comp + d_primary
    g = np.einsum("rkc,rc->rk", prim.color, dC)
    d_sigma = _quadrature_backward(prim, g)
    d_color = prim.weights[..., None] * dC[:, None, :]

    st = cache.reflect
    if st is not None:
        rows = st.rows
        bundle = cache.bundle
        d_trans = np.sum(d_comp[rows] * bundle.attenuated_reflection[rows], axis=1)
        d_sigma[rows] -= (d_trans * st.t_hit_trans)[:, None] * st.partial
        inside = (st.partial > 0) & (st.partial < prim.deltas[rows])
        dtau_dt = np.sum(np.where(inside, prim.sigma[rows], 0.0), axis=1)
        d_t_hit = -d_trans * st.t_hit_trans * dtau_dt
        _reflect_backward(model, st, d_comp[rows] * st.t_hit_trans[:, None], d_t_hit,
                          cache.dirs[rows], cache.origins[rows], grads)

    graw, _ = _radiance_graw(prim, d_sigma, d_color)
    model.field.scatter(prim.lookup, graw, grads.field)


def _reflect_backward(model, st: _ReflectState, dCA, d_t_hit, d, o, grads):
    m = st.march
    n, K = m.sigma.shape
    g = np.einsum("rkc,rc->rk", st.atten_color, dCA)
    d_sigma = _quadrature_backward(m, g)
    d_e = m.weights[..., None] * dCA[:, None, :]
    d_color = st.atten[..., None] * d_e
    d_atten = np.sum(m.color * d_e, axis=2)

    graw, dcr = _radiance_graw(m, d_sigma, d_color)
    model.field.scatter(m.lookup, graw, grads.field)
    da_raw = (d_atten * st.atten * (1.0 - st.atten)).reshape(-1)
    sh = np.repeat(m.sh, K, axis=0)
    graw_att = da_raw[:, None] * sh
    model.att.scatter(st.att_lookup, graw_att, grads.att)

    # plane parameters: through sample positions and the SH direction terms
    d_pos = model.field.positional_grad(m.lookup, graw) + model.att.positional_grad(st.att_lookup, graw_att)
    d_pos = d_pos.reshape(n, K, 3)
    coeffs = m.lookup.raw[:, 1:].reshape(-1, 3, 4)
    d_dir = np.einsum("sc,scj->sj", dcr, sh_basis_grad(coeffs))
    d_dir += da_raw[:, None] * sh_basis_grad(st.att_lookup.raw)
    d_dref = d_dir.reshape(n, K, 3).sum(axis=1) + np.einsum("rk,rkj->rj", m.t, d_pos)
    d_x = d_pos.sum(axis=1)
    d_t = np.sum(d_x * d, axis=1) + d_t_hit

    for i, plane in enumerate(model.planes):
        sel = st.plane_index == i
        if not np.any(sel):
            continue
        nrm = plane.normal
        dn = d[sel] @ nrm
        rel = plane.center - o[sel]
        t = st.t_hit[sel]
        dt = d_t[sel]
        gp = np.sum((dt / dn)[:, None] * nrm, axis=0)
        gn = np.sum((dt / dn)[:, None] * (rel - t[:, None] * d[sel]), axis=0)
        ddr = d_dref[sel]
        gn += -2.0 * np.sum((ddr @ nrm)[:, None] * d[sel] + dn[:, None] * ddr, axis=0)
        grads.planes[i]["p"] += gp
        grads.planes[i]["n"] += gn


def render_ray(field: VoxelRadianceField, ray: Ray, near: float, far: float, K: int):
    """Plain volume rendering of one ray: ``(color, depth, T_end)``."""
    t, deltas = stratified_batch(1, near, far, K)
    m = _march(field, ray.origin[None], ray.direction[None], t, deltas)
    color = m.weights[0] @ m.color[0]
    depth = float(m.weights[0] @ t[0] + m.t_end[0] * far)
    return color, depth, float(m.t_end[0])


def render_reflection_aware(field, att, planes, ray: Ray, near: float, far: float, K: int,
                            far_reflect: float | None = None) -> RenderBundle:
    model = SceneModel(field, att, list(planes))
    settings = RenderSettings(near=near, far=far, n_samples=K, n_reflect_samples=K,
                              far_reflect=far_reflect)
    b, _ = render_rays(model, ray.origin[None], ray.direction[None], settings)
    return b.row(0)


def render_batched(model: SceneModel, origins, dirs, settings: RenderSettings) -> RenderBundle:
    """Deterministic render of many rays in fixed-size chunks."""
    parts = []
    for s in range(0, len(origins), settings.chunk):
        b, _ = render_rays(model, origins[s:s + settings.chunk], dirs[s:s + settings.chunk], settings)
        parts.append(b)
    return RenderBundle.concat(parts)


def render_image(field, att, planes, camera, width: int | None = None, height: int | None = None,
                 K: int = 256, settings: RenderSettings | None = None) -> RenderBundle:
    """Render every pixel-center ray of ``camera``; arrays come back shaped (H, W, ...)."""
    width = camera.width if width is None else width
    height = camera.height if height is None else height
    if settings is None:
        settings = RenderSettings(n_samples=K, n_reflect_samples=K)
    origins, dirs = camera.pixel_rays(width, height)
    model = SceneModel(field, att, list(planes))
    return render_batched(model, origins, dirs, settings).reshape(height, width)
