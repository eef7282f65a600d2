"""Dense trilinear voxel grids for radiance and attenuation.

Both fields store pre-activation values on grid nodes.  Each node of the
radiance grid carries 13 channels (density, then 3 colors x 4 degree-1
spherical-harmonic coefficients); each attenuation node carries 4 SH
coefficients.  The heavy per-sample work (gather, scatter-add and the
positional derivative used by plane gradients) lives in numba kernels.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numba as nb
import numpy as np

SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
N_SH = 4
RADIANCE_CHANNELS = 1 + 3 * N_SH
ATTEN_CHANNELS = N_SH

MAGIC = b"RFL1"
FLAG_CONTRACT = 1
FLAG_OPTIMIZER = 2


def softplus(x):
    return np.logaddexp(0.0, x)


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


def softplus_inv(y):
    y = np.asarray(y, dtype=np.float64)
    # log(e^y - 1) written to stay finite for large y
    return y + np.log(-np.expm1(-y))


def sh_basis(d: np.ndarray) -> np.ndarray:
    """Real SH basis up to degree 1 for unit directions, shape (..., 4)."""
    d = np.asarray(d, dtype=np.float64)
    x, y, z = d[..., 0], d[..., 1], d[..., 2]
    return np.stack([np.full_like(x, SH_C0), -SH_C1 * y, SH_C1 * z, -SH_C1 * x], axis=-1)


def sh_basis_grad(coeffs: np.ndarray) -> np.ndarray:
    """d/dd of ``sum_l coeffs[..., l] * Y_l(d)``; independent of d at degree 1."""
    g = np.empty(coeffs.shape[:-1] + (3,))
    g[..., 0] = -SH_C1 * coeffs[..., 3]
    g[..., 1] = -SH_C1 * coeffs[..., 1]
    g[..., 2] = SH_C1 * coeffs[..., 2]
    return g


def contract_point(x) -> np.ndarray:
    """Map unbounded space into the radius-2 ball, identity inside the unit ball."""
    x = np.asarray(x, dtype=np.float64)
    r = np.linalg.norm(x, axis=-1, keepdims=True)
    safe = np.maximum(r, 1.0)
    return np.where(r <= 1.0, x, (2.0 - 1.0 / safe) * x / safe)


def contract_jacobian(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    r = float(np.linalg.norm(x))
    if r <= 1.0:
        return np.eye(3)
    xh = x / r
    outer = np.outer(xh, xh)
    return (2.0 - 1.0 / r) / r * (np.eye(3) - outer) + outer / (r * r)


@nb.njit(cache=True)
def _gather_kernel(points, grid, res, bmin, bmax, contract, spatial):
    n = points.shape[0]
    nc = grid.shape[1]
    nx, ny, nz = res[0], res[1], res[2]
    raw = np.zeros((n, nc))
    idx = np.empty((n, 8), dtype=np.int64)
    wts = np.empty((n, 8))
    dw = np.zeros((n, 8, 3)) if spatial else np.zeros((1, 8, 3))
    q = np.empty(3)
    fr = np.empty(3)
    i0 = np.empty(3, dtype=np.int64)
    scale = np.empty(3)
    live = np.empty(3)
    jac = np.eye(3)
    for s in range(n):
        px, py, pz = points[s, 0], points[s, 1], points[s, 2]
        if contract:
            r = np.sqrt(px * px + py * py + pz * pz)
            if r > 1.0:
                k = (2.0 - 1.0 / r) / r
                q[0], q[1], q[2] = k * px, k * py, k * pz
                if spatial:
                    for a in range(3):
                        for b in range(3):
                            ha = points[s, a] / r
                            hb = points[s, b] / r
                            jac[a, b] = -k * ha * hb + ha * hb / (r * r)
                        jac[a, a] += k
            else:
                q[0], q[1], q[2] = px, py, pz
                if spatial:
                    for a in range(3):
                        for b in range(3):
                            jac[a, b] = 1.0 if a == b else 0.0
        else:
            q[0], q[1], q[2] = px, py, pz
        for a in range(3):
            na = res[a]
            scale[a] = (na - 1) / (bmax[a] - bmin[a])
            f = (q[a] - bmin[a]) * scale[a]
            live[a] = 1.0
            if f <= 0.0:
                if f < 0.0:
                    live[a] = 0.0
                f = 0.0
            elif f >= na - 1:
                if f > na - 1:
                    live[a] = 0.0
                f = na - 1.0
            ia = int(np.floor(f))
            if ia > na - 2:
                ia = na - 2
            i0[a] = ia
            fr[a] = f - ia
        for c in range(8):
            cx = (c >> 2) & 1
            cy = (c >> 1) & 1
            cz = c & 1
            wx = fr[0] if cx else 1.0 - fr[0]
            wy = fr[1] if cy else 1.0 - fr[1]
            wz = fr[2] if cz else 1.0 - fr[2]
            flat = ((i0[0] + cx) * ny + (i0[1] + cy)) * nz + (i0[2] + cz)
            w = wx * wy * wz
            idx[s, c] = flat
            wts[s, c] = w
            for ch in range(nc):
                raw[s, ch] += w * grid[flat, ch]
            if spatial:
                gx = (1.0 if cx else -1.0) * wy * wz * scale[0] * live[0]
                gy = (1.0 if cy else -1.0) * wx * wz * scale[1] * live[1]
                gz = (1.0 if cz else -1.0) * wx * wy * scale[2] * live[2]
                if contract:
                    for a in range(3):
                        dw[s, c, a] = jac[0, a] * gx + jac[1, a] * gy + jac[2, a] * gz
                else:
                    dw[s, c, 0] = gx
                    dw[s, c, 1] = gy
                    dw[s, c, 2] = gz
    return raw, idx, wts, dw


@nb.njit(cache=True)
def _scatter_kernel(idx, wts, graw, out):
    n = idx.shape[0]
    nc = graw.shape[1]
    for s in range(n):
        for c in range(8):
            flat = idx[s, c]
            w = wts[s, c]
            for ch in range(nc):
                out[flat, ch] += w * graw[s, ch]


@nb.njit(cache=True)
def _spatial_kernel(grid, idx, dw, graw):
    n = idx.shape[0]
    nc = graw.shape[1]
    out = np.zeros((n, 3))
    for s in range(n):
        for c in range(8):
            flat = idx[s, c]
            acc = 0.0
            for ch in range(nc):
                acc += grid[flat, ch] * graw[s, ch]
            for a in range(3):
                out[s, a] += acc * dw[s, c, a]
    return out


@dataclass
class GridLookup:
    """Corner indices and weights of a batch of trilinear queries (kept for adjoints)."""

    raw: np.ndarray
    index: np.ndarray
    weight: np.ndarray
    dweight: np.ndarray | None = None


class VoxelGrid:
    channels = 1

    def __init__(self, resolution, bbox_min, bbox_max, data=None, contract=False):
        self.resolution = tuple(int(r) for r in resolution)
        if min(self.resolution) < 2:
            raise ValueError("grid needs at least 2 nodes per axis")
        self.bbox_min = np.asarray(bbox_min, dtype=np.float64).reshape(3)
        self.bbox_max = np.asarray(bbox_max, dtype=np.float64).reshape(3)
        self.contract = bool(contract)
        shape = self.resolution + (self.channels,)
        self.data = np.zeros(shape) if data is None else np.asarray(data, dtype=np.float64).reshape(shape)

    @property
    def flat(self) -> np.ndarray:
        return self.data.reshape(-1, self.channels)

    @property
    def cell_size(self) -> np.ndarray:
        return (self.bbox_max - self.bbox_min) / (np.asarray(self.resolution) - 1)

    def node_position(self, i, j, k) -> np.ndarray:
        return self.bbox_min + np.array([i, j, k]) * self.cell_size

    def lookup(self, points: np.ndarray, spatial: bool = False) -> GridLookup:
        pts = np.ascontiguousarray(np.asarray(points, dtype=np.float64).reshape(-1, 3))
        raw, idx, w, dw = _gather_kernel(pts, self.flat, np.asarray(self.resolution, dtype=np.int64),
                                         self.bbox_min, self.bbox_max, self.contract, spatial)
        return GridLookup(raw, idx, w, dw if spatial else None)

    def scatter(self, lookup: GridLookup, graw: np.ndarray, out: np.ndarray) -> None:
        """Accumulate ``graw`` (per-sample raw-value gradients) into ``out`` (flat grid shape)."""
        _scatter_kernel(lookup.index, lookup.weight, np.ascontiguousarray(graw), out)

    def positional_grad(self, lookup: GridLookup, graw: np.ndarray) -> np.ndarray:
        """Chain ``graw`` through the interpolation weights to a gradient w.r.t. sample position."""
        return _spatial_kernel(self.flat, lookup.index, lookup.dweight, np.ascontiguousarray(graw))

    def copy(self):
        return type(self)(self.resolution, self.bbox_min, self.bbox_max, self.data.copy(), self.contract)


class VoxelRadianceField(VoxelGrid):
    channels = RADIANCE_CHANNELS

    @property
    def density_raw(self) -> np.ndarray:
        return self.data[..., 0]

    @property
    def color_coeffs(self) -> np.ndarray:
        return self.data[..., 1:].reshape(self.resolution + (3, N_SH))

    @classmethod
    def constant(cls, resolution, bbox_min, bbox_max, density=0.01, color=0.5, contract=False):
        f = cls(resolution, bbox_min, bbox_max, contract=contract)
        f.data[..., 0] = softplus_inv(density)
        f.data[..., 1::N_SH] = np.log(color / (1.0 - color)) / SH_C0
        return f


class AttenuationField(VoxelGrid):
    channels = ATTEN_CHANNELS

    @property
    def atten_raw(self) -> np.ndarray:
        return self.data

    @classmethod
    def constant(cls, resolution, bbox_min, bbox_max, value=0.5, contract=False):
        f = cls(resolution, bbox_min, bbox_max, contract=contract)
        f.data[..., 0] = np.log(value / (1.0 - value)) / SH_C0
        return f


@dataclass
class FieldSample:
    sigma: float
    color: np.ndarray
    corner_weights: np.ndarray
    corner_indices: np.ndarray


def radiance_from_raw(raw: np.ndarray, sh: np.ndarray):
    """Activate interpolated radiance channels: returns (sigma, color, color_raw)."""
    sigma = softplus(raw[:, 0])
    coeffs = raw[:, 1:].reshape(-1, 3, N_SH)
    color_raw = np.einsum("scl,sl->sc", coeffs, sh)
    return sigma, sigmoid(color_raw), color_raw


def sample_radiance(field: VoxelRadianceField, x, d) -> FieldSample:
    lk = field.lookup(np.asarray(x, dtype=np.float64)[None])
    sigma, color, _ = radiance_from_raw(lk.raw, sh_basis(np.asarray(d)[None]))
    return FieldSample(float(sigma[0]), color[0], lk.weight[0], lk.index[0])


def sample_attenuation(att: AttenuationField, x, d_prime) -> float:
    lk = att.lookup(np.asarray(x, dtype=np.float64)[None])
    return float(sigmoid(lk.raw[0] @ sh_basis(np.asarray(d_prime, dtype=np.float64))))


# --- checkpoint file ---------------------------------------------------------

def _grid_bytes(grid: VoxelGrid) -> bytes:
    # one scalar grid per channel, x fastest
    chans = np.transpose(grid.data, (3, 2, 1, 0))
    return np.ascontiguousarray(chans, dtype="<f4").tobytes()


def _grid_from_bytes(buf: bytes, offset: int, cls, res, bmin, bmax, contract):
    nx, ny, nz = res
    count = cls.channels * nx * ny * nz
    arr = np.frombuffer(buf, dtype="<f4", count=count, offset=offset)
    data = arr.reshape(cls.channels, nz, ny, nx).transpose(3, 2, 1, 0).astype(np.float64)
    return cls(res, bmin, bmax, data, contract), offset + 4 * count


class BadCheckpoint(ValueError):
    pass


def write_checkpoint(path, field: VoxelRadianceField, att: AttenuationField, planes,
                     optimizer_blob: bytes | None = None) -> None:
    flags = (FLAG_CONTRACT if field.contract else 0) | (FLAG_OPTIMIZER if optimizer_blob else 0)
    parts = [MAGIC, struct.pack("<I", flags)]
    for g in (field, att):
        parts.append(struct.pack("<3I", *g.resolution))
        parts.append(struct.pack("<6d", *g.bbox_min, *g.bbox_max))
    parts.append(struct.pack("<I", len(planes)))
    for pl in planes:
        parts.append(struct.pack("<11d", *pl.center, *pl.normal, *pl.up, pl.width, pl.height))
    parts.append(_grid_bytes(field))
    parts.append(_grid_bytes(att))
    if optimizer_blob:
        parts.append(struct.pack("<Q", len(optimizer_blob)))
        parts.append(optimizer_blob)
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def read_checkpoint(path):
    """Returns ``(field, att, planes, optimizer_blob_or_None)``."""
    from .geometry import PlaneSegment

    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != MAGIC:
        raise BadCheckpoint(f"{path}: bad magic {buf[:4]!r}")
    try:
        off = 4
        (flags,) = struct.unpack_from("<I", buf, off)
        off += 4
        heads = []
        for _ in range(2):
            res = struct.unpack_from("<3I", buf, off)
            off += 12
            bb = struct.unpack_from("<6d", buf, off)
            off += 48
            heads.append((res, bb[:3], bb[3:]))
        (n_planes,) = struct.unpack_from("<I", buf, off)
        off += 4
        planes = []
        for _ in range(n_planes):
            v = struct.unpack_from("<11d", buf, off)
            off += 88
            planes.append(PlaneSegment(v[0:3], v[3:6], v[6:9], v[9], v[10]))
        contract = bool(flags & FLAG_CONTRACT)
        field, off = _grid_from_bytes(buf, off, VoxelRadianceField, *heads[0], contract)
        att, off = _grid_from_bytes(buf, off, AttenuationField, *heads[1], contract)
        blob = None
        if flags & FLAG_OPTIMIZER:
            (n,) = struct.unpack_from("<Q", buf, off)
            off += 8
            blob = buf[off:off + n]
    except (struct.error, ValueError) as exc:
        raise BadCheckpoint(f"{path}: truncated or corrupt ({exc})") from exc
    return field, att, planes, blob
