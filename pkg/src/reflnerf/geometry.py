"""Rays, finite plane segments, ray/plane intersection and mirror reflection."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

EPS_PARALLEL = 1e-8
EPS_OFFSET = 1e-4
FIT_DILATION = 1.05


class DegenerateInput(ValueError):
    pass


def _vec(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64).reshape(3)


def normalize(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


@dataclass
class Ray:
    origin: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        self.origin = _vec(self.origin)
        self.direction = _vec(self.direction)
        if abs(np.linalg.norm(self.direction) - 1.0) > 1e-9:
            raise ValueError("ray direction must be unit length")

    def at(self, t: float) -> np.ndarray:
        return self.origin + t * self.direction


@dataclass
class PlaneSegment:
    """Finite rectangular reflector.

    ``center`` is the segment midpoint, ``normal`` and ``up`` are orthonormal,
    and ``width``/``height`` are the full extents along the side axis
    (``up x normal``) and ``up`` respectively.  The normal carries no sign
    convention; every query orients it against the incoming ray.
    """

    center: np.ndarray
    normal: np.ndarray
    up: np.ndarray
    width: float
    height: float

    def __post_init__(self):
        self.center = _vec(self.center)
        self.normal = _vec(self.normal)
        self.up = _vec(self.up)
        self.width = float(self.width)
        self.height = float(self.height)
        if self.width <= 0 or self.height <= 0:
            raise ValueError("plane extents must be positive")

    @property
    def side(self) -> np.ndarray:
        s = np.cross(self.up, self.normal)
        return s / np.linalg.norm(s)

    @property
    def extent(self) -> float:
        return max(self.width, self.height)

    def orthonormalize(self) -> None:
        """Gram-Schmidt: renormalize ``normal``, then make ``up`` orthogonal to it."""
        n = self.normal / np.linalg.norm(self.normal)
        u = self.up - np.dot(self.up, n) * n
        nu = np.linalg.norm(u)
        if nu < 1e-12:
            raise DegenerateInput("up vector collapsed onto the normal")
        u = u / nu
        # second pass removes the residual left by round-off in the first
        u = u - np.dot(u, n) * n
        self.normal = n
        self.up = u / np.linalg.norm(u)

    def copy(self) -> "PlaneSegment":
        return PlaneSegment(self.center.copy(), self.normal.copy(), self.up.copy(),
                            self.width, self.height)

    def corners(self) -> np.ndarray:
        s, u = self.side, self.up
        hw, hh = self.width / 2, self.height / 2
        return np.array([self.center + a * hw * s + b * hh * u
                         for a, b in ((-1, -1), (1, -1), (1, 1), (-1, 1))])

    def to_record(self) -> dict:
        fmt = lambda v: [repr(float(c)) for c in v]  # noqa: E731
        return {"p": fmt(self.center), "n": fmt(self.normal), "u": fmt(self.up),
                "w": repr(self.width), "h": repr(self.height)}

    @classmethod
    def from_record(cls, rec: dict) -> "PlaneSegment":
        f = lambda v: [float(c) for c in v]  # noqa: E731
        return cls(f(rec["p"]), f(rec["n"]), f(rec["u"]), float(rec["w"]), float(rec["h"]))


@dataclass
class PlaneHit:
    t: float
    x: np.ndarray
    uv: np.ndarray
    plane_index: int = 0
    normal: np.ndarray = field(default=None, repr=False)


def intersect_segment(ray: Ray, plane: PlaneSegment, plane_index: int = 0) -> PlaneHit | None:
    dn = float(np.dot(ray.direction, plane.normal))
    if abs(dn) < EPS_PARALLEL:
        return None
    t = float(np.dot(plane.center - ray.origin, plane.normal)) / dn
    if t <= 0:
        return None
    x = ray.origin + t * ray.direction
    rel = x - plane.center
    uv = np.array([np.dot(rel, plane.side), np.dot(rel, plane.up)])
    if abs(uv[0]) > plane.width / 2 or abs(uv[1]) > plane.height / 2:
        return None
    return PlaneHit(t, x, uv, plane_index, plane.normal)


def nearest_hit(ray: Ray, planes: list[PlaneSegment]) -> PlaneHit | None:
    best = None
    for i, plane in enumerate(planes):
        hit = intersect_segment(ray, plane, i)
        if hit is not None and (best is None or hit.t < best.t):
            best = hit
    return best


def reflect_direction(d: np.ndarray, n: np.ndarray) -> np.ndarray:
    """Mirror ``d`` about the plane with normal ``n``; works on (..., 3) batches."""
    d = np.asarray(d, dtype=np.float64)
    n = np.asarray(n, dtype=np.float64)
    return d - 2.0 * np.sum(d * n, axis=-1, keepdims=True) * n


def spawn_reflected_ray(hit: PlaneHit, d: np.ndarray, n: np.ndarray,
                        offset: float = EPS_OFFSET) -> Ray:
    d = _vec(d)
    n = _vec(n)
    if np.dot(d, n) > 0:
        n = -n
    d_ref = reflect_direction(d, n)
    d_ref = d_ref / np.linalg.norm(d_ref)
    return Ray(hit.x + offset * d_ref, d_ref)


def fit_plane(points) -> PlaneSegment:
    """Least-squares plane through ``points`` with a dilated bounding rectangle."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3 or len(pts) < 3:
        raise DegenerateInput("need at least 3 points in 3D")
    center = pts.mean(axis=0)
    rel = pts - center
    evals, evecs = np.linalg.eigh(rel.T @ rel)
    scale = max(evals[-1], 1e-300)
    # collinear data leaves two vanishing eigenvalues
    if evals[1] <= 1e-12 * scale:
        raise DegenerateInput("points are collinear")
    n = evecs[:, 0]
    n = n / np.linalg.norm(n)
    up = None
    for cand in (np.array([0.0, 1.0, 0.0]), np.array([0.0, 0.0, 1.0])):
        u = cand - np.dot(cand, n) * n
        if np.linalg.norm(u) > 1e-6:
            up = u / np.linalg.norm(u)
            break
    side = np.cross(up, n)
    side /= np.linalg.norm(side)
    xs, ys = rel @ side, rel @ up
    w = (xs.max() - xs.min()) * FIT_DILATION
    h = (ys.max() - ys.min()) * FIT_DILATION
    if w <= 0 or h <= 0:
        raise DegenerateInput("points span no area in the fitted plane")
    return PlaneSegment(center, n, up, w, h)


def intersect_planes_batch(origins: np.ndarray, dirs: np.ndarray, planes: list[PlaneSegment]):
    """Vectorized nearest segment hit for N rays.

    Returns ``(t, index)``; ``index`` is -1 and ``t`` is +inf where nothing is hit.
    """
    n_rays = len(origins)
    best_t = np.full(n_rays, np.inf)
    best_i = np.full(n_rays, -1, dtype=np.int64)
    for i, pl in enumerate(planes):
        dn = dirs @ pl.normal
        ok = np.abs(dn) >= EPS_PARALLEL
        safe = np.where(ok, dn, 1.0)
        t = ((pl.center - origins) @ pl.normal) / safe
        x = origins + t[:, None] * dirs
        rel = x - pl.center
        ok &= t > 0
        ok &= np.abs(rel @ pl.side) <= pl.width / 2
        ok &= np.abs(rel @ pl.up) <= pl.height / 2
        better = ok & (t < best_t)
        best_t[better] = t[better]
        best_i[better] = i
    return best_t, best_i
