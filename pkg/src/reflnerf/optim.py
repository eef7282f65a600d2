"""Adjoint assembly, Adam updates, the three-phase schedule and gradient checking."""

from __future__ import annotations

import csv
import hashlib
import io
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numba as nb
import numpy as np

from .config import Config
from .field import AttenuationField, VoxelRadianceField, read_checkpoint, write_checkpoint
from .geometry import PlaneSegment
from .losses import edge_loss, photometric_loss, stencil_mask
from .renderer import RenderSettings, SceneModel, render_rays, render_rays_backward

log = logging.getLogger(__name__)

PLANE_KEYS = ("p", "n", "u", "w", "h")


class NonFiniteGradient(FloatingPointError):
    pass


@dataclass
class GradientBuffers:
    field: np.ndarray
    att: np.ndarray
    planes: list[dict]

    @classmethod
    def zeros_like(cls, model: SceneModel) -> "GradientBuffers":
        planes = [{"p": np.zeros(3), "n": np.zeros(3), "u": np.zeros(3),
                   "w": np.zeros(1), "h": np.zeros(1)} for _ in model.planes]
        return cls(np.zeros_like(model.field.flat), np.zeros_like(model.att.flat), planes)

    def tensors(self) -> dict[str, np.ndarray]:
        out = {"field": self.field, "att": self.att}
        for i, pg in enumerate(self.planes):
            for k in PLANE_KEYS:
                out[f"plane{i}.{k}"] = pg[k]
        return out

    def sq_norms(self) -> dict[str, float]:
        """Per-tensor sums of squares; non-finite entries surface as inf or nan."""
        return {k: _sumsq(np.ascontiguousarray(t).reshape(-1)) for k, t in self.tensors().items()}

    def all_finite(self) -> bool:
        return all(np.isfinite(v) or np.isfinite(t).all()
                   for v, t in zip(self.sq_norms().values(), self.tensors().values()))


@nb.njit(cache=True)
def _sumsq(x):
    acc = 0.0
    for i in range(x.size):
        acc += x[i] * x[i]
    return acc


@dataclass
class PhaseState:
    name: str
    plane_trainable: bool
    atten_trainable: bool
    edge_weight: float
    plane_lr_scale: float = 1.0


@dataclass
class TrainSchedule:
    n_phase_a: int
    n_phase_b: int
    n_phase_c: int
    edge_weight: float = 0.5
    edge_loss: bool = True
    plane_refine: bool = True
    scheduling: bool = True
    reflections: bool = True
    plane_anneal: bool = False

    @classmethod
    def from_config(cls, cfg: Config) -> "TrainSchedule":
        return cls(cfg.n_phase_a, cfg.n_phase_b, cfg.n_phase_c, cfg.edge_weight, cfg.edge_loss,
                   cfg.plane_refine, cfg.scheduling, cfg.reflection_rays, cfg.plane_anneal)

    @property
    def total(self) -> int:
        return self.n_phase_a + self.n_phase_b + self.n_phase_c

    def boundaries(self) -> list[tuple[str, int, int]]:
        if not self.scheduling:
            return [("J", 0, self.total)]
        a, b = self.n_phase_a, self.n_phase_a + self.n_phase_b
        return [("A", 0, a), ("B", a, b), ("C", b, self.total)]

    def at(self, it: int) -> PhaseState:
        edge_on = self.edge_loss and self.reflections
        plane_on = self.plane_refine and self.reflections
        if not self.scheduling:
            return PhaseState("J", plane_on, self.reflections, self.edge_weight if edge_on else 0.0)
        if it < self.n_phase_a:
            # cosine decay over the second half lets the plane settle instead of wandering with batch noise
            t = max(0.0, 2.0 * it / self.n_phase_a - 1.0)
            scale = 0.5 * (1.0 + np.cos(np.pi * t)) if self.plane_anneal else 1.0
            return PhaseState("A", plane_on, self.reflections, 0.0, scale)
        if it < self.n_phase_a + self.n_phase_b:
            return PhaseState("B", False, self.reflections, self.edge_weight if edge_on else 0.0)
        j = it - self.n_phase_a - self.n_phase_b
        lam = self.edge_weight * (1.0 - (j + 1) / self.n_phase_c) if edge_on else 0.0
        return PhaseState("C", False, False, lam)


# --- Adam --------------------------------------------------------------------

@nb.njit(cache=True)
def _adam_kernel(p, g, m, v, lr, b1, b2, eps, bc1, bc2, scale):
    for i in range(p.size):
        gi = g[i] * scale
        mi = b1 * m[i] + (1.0 - b1) * gi
        vi = b2 * v[i] + (1.0 - b2) * gi * gi
        m[i] = mi
        v[i] = vi
        p[i] -= lr * (mi / bc1) / (np.sqrt(vi / bc2) + eps)


@nb.njit(cache=True)
def _vector_adam_kernel(p, g, m, v, lr, b1, b2, eps, bc1, bc2, scale):
    # one second moment for the whole vector (stored replicated), so the
    # update direction follows the first moment rather than the axes
    sq = 0.0
    for i in range(p.size):
        sq += (g[i] * scale) ** 2
    vi = b2 * v[0] + (1.0 - b2) * sq
    denom = np.sqrt(vi / bc2) + eps
    for i in range(p.size):
        mi = b1 * m[i] + (1.0 - b1) * g[i] * scale
        m[i] = mi
        v[i] = vi
        p[i] -= lr * (mi / bc1) / denom


@dataclass
class OptimizerState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    steps: dict = field(default_factory=dict)

    def to_bytes(self) -> bytes:
        out = io.BytesIO()
        keys = sorted(self.m)
        out.write(struct.pack("<3dI", self.beta1, self.beta2, self.eps, len(keys)))
        for k in keys:
            name = k.encode()
            out.write(struct.pack("<IIQ", len(name), self.steps[k], self.m[k].size))
            out.write(name)
            out.write(np.ascontiguousarray(self.m[k], dtype="<f4").tobytes())
            out.write(np.ascontiguousarray(self.v[k], dtype="<f4").tobytes())
        return out.getvalue()

    @classmethod
    def from_bytes(cls, blob: bytes) -> "OptimizerState":
        b1, b2, eps, n = struct.unpack_from("<3dI", blob, 0)
        off = struct.calcsize("<3dI")
        st = cls(b1, b2, eps)
        for _ in range(n):
            ln, steps, size = struct.unpack_from("<IIQ", blob, off)
            off += 16
            k = blob[off:off + ln].decode()
            off += ln
            st.m[k] = np.frombuffer(blob, "<f4", size, off).astype(np.float64)
            off += 4 * size
            st.v[k] = np.frombuffer(blob, "<f4", size, off).astype(np.float64)
            off += 4 * size
            st.steps[k] = steps
        return st


def adam_step(state: OptimizerState, params: dict, grads: dict, lr, scale: float = 1.0,
              vector_keys=()) -> dict:
    """In-place bias-corrected Adam update of every array in ``params``.

    ``lr`` is a float or a dict keyed like ``params``; ``scale`` multiplies
    the gradients first (used for norm clipping).  Keys in ``vector_keys`` share
    one second moment across their entries, which keeps the update of a 3-vector
    independent of the world axes.
    """
    for k, p in params.items():
        g = grads[k]
        if p.shape != g.shape:
            raise ValueError(f"{k}: parameter {p.shape} vs gradient {g.shape}")
        if k not in state.m:
            state.m[k] = np.zeros(p.size)
            state.v[k] = np.zeros(p.size)
            state.steps[k] = 0
        state.steps[k] += 1
        t = state.steps[k]
        rate = lr[k] if isinstance(lr, dict) else lr
        flat = p.reshape(-1)
        if not np.shares_memory(flat, p):
            raise ValueError(f"{k}: parameter must be contiguous")
        kernel = _vector_adam_kernel if k in vector_keys else _adam_kernel
        kernel(flat, np.ascontiguousarray(g).reshape(-1), state.m[k], state.v[k], rate,
               state.beta1, state.beta2, state.eps, 1.0 - state.beta1 ** t,
               1.0 - state.beta2 ** t, scale)
    return params


def model_step(model: SceneModel, grads: GradientBuffers, state: OptimizerState, phase: PhaseState,
               lr_grid: float, lr_plane: float, clip_norm: float | None = 10.0) -> float:
    """Clip, update the trainable tensors of ``model`` for ``phase``; returns the pre-clip norm."""
    params, g, lrs = {"field": model.field.flat}, {"field": grads.field}, {"field": lr_grid}
    if phase.atten_trainable:
        params["att"], g["att"], lrs["att"] = model.att.flat, grads.att, lr_grid
    boxed, vector_keys = [], []
    if phase.plane_trainable:
        for i, (pl, pg) in enumerate(zip(model.planes, grads.planes)):
            wh = {"w": np.array([pl.width]), "h": np.array([pl.height])}
            boxed.append((pl, wh))
            for k in PLANE_KEYS:
                key = f"plane{i}.{k}"
                params[key] = wh[k] if k in wh else {"p": pl.center, "n": pl.normal, "u": pl.up}[k]
                g[key] = pg[k]
                lrs[key] = lr_plane
                if k in ("p", "n", "u"):
                    vector_keys.append(key)
            # only the tangential part of the normal's gradient survives renormalization
            n_hat = pl.normal / np.linalg.norm(pl.normal)
            g[f"plane{i}.n"] = pg["n"] - np.dot(pg["n"], n_hat) * n_hat
    norm = float(np.sqrt(sum(_sumsq(np.ascontiguousarray(x).reshape(-1)) for x in g.values())))
    scale = 1.0 if clip_norm is None or norm <= clip_norm else clip_norm / norm
    adam_step(state, params, g, lrs, scale, vector_keys)
    for pl, wh in boxed:
        pl.width = max(float(wh["w"][0]), 1e-6)
        pl.height = max(float(wh["h"][0]), 1e-6)
        pl.orthonormalize()
    return norm


# --- loss + adjoint for a batch of patches -----------------------------------

@dataclass
class PatchBatch:
    origins: np.ndarray
    dirs: np.ndarray
    gt: np.ndarray

    @property
    def shape(self):
        return self.origins.shape[:3]


def patch_losses(bundle, batch: PatchBatch, edge_weight: float, fixed_reflected=None, with_grad=False):
    """Photometric + edge terms on a flat bundle laid out as the patches of ``batch``.

    Edge terms use only patches with at least one plane hit, and only interior
    pixels whose 3x3 stencil lies on the plane; ``fixed_reflected``
    substitutes the reflected-color patches (gradient checking holds them constant).
    """
    P, S, _ = batch.shape
    comp = bundle.composite.reshape(P, S, S, 3)
    photo = photometric_loss(comp, batch.gt, with_grad=with_grad)
    if with_grad:
        photo, d_comp = photo
    prim = bundle.primary.reshape(P, S, S, 3)
    refl = bundle.reflected.reshape(P, S, S, 3) if fixed_reflected is None else fixed_reflected
    hits = bundle.hit.reshape(P, S, S)
    use = np.nonzero(hits.any(axis=(1, 2)))[0]
    edge = 0.0
    d_prim = np.zeros_like(prim) if with_grad else None
    for p in use:
        # the reflected image only exists on the plane; skip stencils that leave it
        mask = stencil_mask(hits[p])
        if with_grad and edge_weight > 0:
            val, g = edge_loss(prim[p], refl[p], with_grad=True, mask=mask)
            d_prim[p] = edge_weight * g / len(use)
        else:
            val = edge_loss(prim[p], refl[p], mask=mask)
        edge += val / len(use)
    if with_grad:
        return photo, edge, d_comp.reshape(-1, 3), d_prim.reshape(-1, 3)
    return photo, edge


def backward(model: SceneModel, batch: PatchBatch, settings: RenderSettings, edge_weight: float,
             rng=None):
    """Forward + exact adjoint of ``L_photo + edge_weight * L_edge`` for one batch.

    Returns ``(photo, edge, grads)``.
    """
    bundle, cache = render_rays(model, batch.origins.reshape(-1, 3), batch.dirs.reshape(-1, 3),
                                settings, rng=rng, keep=True)
    photo, edge, d_comp, d_prim = patch_losses(bundle, batch, edge_weight, with_grad=True)
    grads = GradientBuffers.zeros_like(model)
    render_rays_backward(model, cache, d_comp, grads, d_primary=d_prim if edge_weight > 0 else None)
    if not grads.all_finite():
        raise NonFiniteGradient("non-finite gradient; aborting step")
    return photo, edge, grads


# --- model construction ------------------------------------------------------

def perturb_plane(plane: PlaneSegment, angle_deg: float, shift_frac: float) -> PlaneSegment:
    """Rotate the normal by ``angle_deg`` about an in-plane diagonal and push the center
    ``shift_frac * extent`` along the original normal."""
    out = plane.copy()
    axis = plane.side + plane.up
    axis /= np.linalg.norm(axis)
    th = np.radians(angle_deg)

    def rot(v):
        return v * np.cos(th) + np.cross(axis, v) * np.sin(th) + axis * np.dot(axis, v) * (1 - np.cos(th))

    out.normal = rot(plane.normal)
    out.up = rot(plane.up)
    out.center = plane.center + shift_frac * plane.extent * plane.normal
    out.orthonormalize()
    return out


def normal_angle_deg(a: PlaneSegment, b: PlaneSegment) -> float:
    c = abs(float(np.dot(a.normal, b.normal)) / (np.linalg.norm(a.normal) * np.linalg.norm(b.normal)))
    return float(np.degrees(np.arccos(min(1.0, c))))


def center_error_frac(a: PlaneSegment, ref: PlaneSegment) -> float:
    return float(np.linalg.norm(a.center - ref.center) / ref.extent)


def init_model(cfg: Config, bbox_min, bbox_max, planes: list[PlaneSegment]) -> SceneModel:
    res = (cfg.grid_res,) * 3
    fld = VoxelRadianceField.constant(res, bbox_min, bbox_max, density=cfg.init_density)
    att = AttenuationField.constant((cfg.atten_res,) * 3, bbox_min, bbox_max, value=0.5)
    init = [perturb_plane(p, cfg.plane_init_angle_deg, cfg.plane_init_shift) for p in planes]
    return SceneModel(fld, att, init)


def model_checksums(model: SceneModel) -> dict[str, str]:
    h = lambda a: hashlib.sha256(np.ascontiguousarray(a).tobytes()).hexdigest()  # noqa: E731
    planes = b"".join(np.concatenate([p.center, p.normal, p.up, [p.width, p.height]]).tobytes()
                      for p in model.planes)
    return {"field": h(model.field.data), "att": h(model.att.data),
            "planes": hashlib.sha256(planes).hexdigest()}


def save_model(path, model: SceneModel, state: OptimizerState | None = None) -> None:
    write_checkpoint(path, model.field, model.att, model.planes,
                     state.to_bytes() if state is not None else None)


def load_model(path) -> tuple[SceneModel, OptimizerState | None]:
    fld, att, planes, blob = read_checkpoint(path)
    return SceneModel(fld, att, planes), (OptimizerState.from_bytes(blob) if blob else None)


# --- training ----------------------------------------------------------------

class TrainingData:
    """Pixel rays and target colors of the training views, as (V, H, W, 3) arrays."""

    def __init__(self, cameras, targets):
        rays = [c.pixel_rays() for c in cameras]
        h, w = targets[0].shape[:2]
        self.origins = np.stack([o.reshape(h, w, 3) for o, _ in rays])
        self.dirs = np.stack([d.reshape(h, w, 3) for _, d in rays])
        self.targets = np.stack(targets).astype(np.float64)

    def sample(self, rng, n_patches: int, size: int) -> PatchBatch:
        V, H, W = self.targets.shape[:3]
        views = rng.integers(0, V, n_patches)
        ys = rng.integers(0, H - size + 1, n_patches)
        xs = rng.integers(0, W - size + 1, n_patches)
        sl = [(v, slice(y, y + size), slice(x, x + size)) for v, y, x in zip(views, ys, xs)]
        return PatchBatch(np.stack([self.origins[s] for s in sl]), np.stack([self.dirs[s] for s in sl]),
                          np.stack([self.targets[s] for s in sl]))


@dataclass
class TrainResult:
    model: SceneModel
    log: list[dict]
    snapshots: dict
    state: OptimizerState


LOG_FIELDS = ("iter", "phase", "L_photo", "L_edge", "lambda_edge")


def write_log(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=LOG_FIELDS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(r[k]) if isinstance(r[k], float) else r[k]) for k in LOG_FIELDS})


def read_log(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        r["iter"] = int(r["iter"])
        for k in ("L_photo", "L_edge", "lambda_edge"):
            r[k] = float(r[k])
    return rows


def run_schedule(cfg: Config, data: TrainingData, model: SceneModel, far: float,
                 out_dir=None, progress_every: int = 0, on_step=None) -> TrainResult:
    """Train ``model`` in place through the configured phases.

    ``on_step(it, model, row)`` runs after every update when given.
    """
    sched = TrainSchedule.from_config(cfg)
    settings = RenderSettings(near=cfg.near, far=far, n_samples=cfg.n_samples,
                              n_reflect_samples=cfg.n_reflect_samples, reflections=cfg.reflection_rays)
    rng = np.random.default_rng(cfg.seed)
    state = OptimizerState()
    rows = []
    snapshots = {"init": {"planes": [p.copy() for p in model.planes], "sums": model_checksums(model)}}
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    for name, start, stop in sched.boundaries():
        for it in range(start, stop):
            phase = sched.at(it)
            batch = data.sample(rng, cfg.patches_per_iter, cfg.patch_size)
            photo, edge, grads = backward(model, batch, settings, phase.edge_weight,
                                          rng if cfg.jitter else None)
            model_step(model, grads, state, phase, cfg.lr_grid, cfg.lr_plane * phase.plane_lr_scale, cfg.clip_norm)
            rows.append({"iter": it, "phase": phase.name, "L_photo": photo, "L_edge": edge,
                         "lambda_edge": phase.edge_weight})
            if on_step is not None:
                on_step(it, model, rows[-1])
            if progress_every and (it + 1) % progress_every == 0:
                recent = rows[-progress_every:]
                log.info("iter %d phase %s photo %.5f edge %.5f", it + 1, phase.name,
                         np.mean([r["L_photo"] for r in recent]), np.mean([r["L_edge"] for r in recent]))
        snapshots[name] = {"planes": [p.copy() for p in model.planes], "sums": model_checksums(model)}
        if out is not None:
            save_model(out / f"phase_{name}.rfl", model, state)
    if out is not None:
        save_model(out / "model.rfl", model, state)
        write_log(out / "train_log.csv", rows)
    return TrainResult(model, rows, snapshots, state)


# --- finite differences ------------------------------------------------------

def central_difference(f, x: np.ndarray, index, step: float) -> float:
    old = x[index]
    x[index] = old + step
    fp = f()
    x[index] = old - step
    fm = f()
    x[index] = old
    return (fp - fm) / (2 * step)


def _rel_err(a, f, floor):
    return float(np.max(np.abs(a - f) / np.maximum(np.maximum(np.abs(a), np.abs(f)), floor)))


def gradcheck_problem(seed: int, grid: int = 8, n_patches: int = 4, K: int = 24):
    """Small random model (2 planes) and patch batch for adjoint verification."""
    rng = np.random.default_rng(seed)
    lo, hi = -np.ones(3), np.ones(3)
    fld = VoxelRadianceField((grid,) * 3, lo, hi)
    fld.data[...] = rng.normal(0.0, 1.0, fld.data.shape)
    fld.data[..., 0] -= 0.5
    att = AttenuationField((grid,) * 3, lo, hi)
    att.data[...] = rng.normal(0.0, 1.0, att.data.shape)

    def tilted(center, ax, deg, w, h):
        th = np.radians(deg)
        n = np.array([np.sin(th), 0, np.cos(th)]) if ax == "y" else np.array([0, np.sin(th), np.cos(th)])
        up = np.array([0.0, 1.0, 0.0]) if ax == "y" else np.array([0, np.cos(th), -np.sin(th)])
        return PlaneSegment(center, n, up, w, h)

    planes = [tilted((-0.35, 0.0, -0.45) + rng.uniform(-0.05, 0.05, 3), "x", 15 + rng.uniform(-5, 5), 0.9, 1.4),
              tilted((0.4, 0.05, -0.25) + rng.uniform(-0.05, 0.05, 3), "y", -35 + rng.uniform(-5, 5), 0.8, 1.2)]
    model = SceneModel(fld, att, planes)
    side = int(np.ceil(np.sqrt(n_patches))) * 8
    tan = np.tan(np.radians(35))
    g = (np.arange(side) + 0.5) / side * 2 - 1
    dirs = np.stack([*np.meshgrid(g * tan, -g * tan, indexing="xy"), -np.ones((side, side))], -1)
    dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
    origin = np.array([0.0, 0.0, 0.9])
    patches = []
    for p in range(n_patches):
        y, x = divmod(p, side // 8)
        patches.append(dirs[8 * y:8 * y + 8, 8 * x:8 * x + 8])
    d = np.stack(patches)
    batch = PatchBatch(np.broadcast_to(origin, d.shape).copy(), d, rng.uniform(0, 1, d.shape))
    settings = RenderSettings(near=0.05, far=2.4, n_samples=K, n_reflect_samples=K)
    return model, batch, settings


@dataclass
class GradcheckReport:
    errors: dict
    tolerance: float = 1e-3

    @property
    def passed(self) -> bool:
        return all(e < self.tolerance for e in self.errors.values())


def finite_difference_check(seed: int = 0, edge_weight: float = 0.5, grid: int = 8,
                            n_patches: int = 4, K: int = 24, n_entries: int = 24,
                            step_grid: float = 1e-3, step_plane: float = 1e-6,
                            backward_fn=None, problem=None) -> GradcheckReport:
    """Compare adjoints with central differences on a random small problem.

    The edge term's reflected patches are frozen at the base point so the
    objective matches the stop-gradient the adjoint implements.
    """
    backward_fn = backward if backward_fn is None else backward_fn
    model, batch, settings = problem if problem is not None else gradcheck_problem(seed, grid, n_patches, K)
    base, _ = render_rays(model, batch.origins.reshape(-1, 3), batch.dirs.reshape(-1, 3), settings)
    P, S, _ = batch.shape
    frozen = base.reflected.reshape(P, S, S, 3).copy()
    if not base.hit.any():
        raise ValueError("gradient-check problem has no plane hits")

    def objective():
        b, _ = render_rays(model, batch.origins.reshape(-1, 3), batch.dirs.reshape(-1, 3), settings)
        photo, edge = patch_losses(b, batch, edge_weight, fixed_reflected=frozen)
        return photo + edge_weight * edge

    _, _, grads = backward_fn(model, batch, settings, edge_weight)
    rng = np.random.default_rng(seed + 1000)
    errors = {}

    def check_grid(name, arr, garr):
        flat, gflat = arr.reshape(-1), garr.reshape(-1)
        top = np.argsort(-np.abs(gflat), kind="stable")[: n_entries // 2]
        rand = rng.choice(flat.size, n_entries - len(top), replace=False)
        idx = np.unique(np.concatenate([top, rand]))
        fd = np.array([central_difference(objective, flat, i, step_grid) for i in idx])
        floor = max(1e-3 * np.max(np.abs(gflat)), 1e-8)
        errors[name] = _rel_err(gflat[idx], fd, floor)

    # grid groups perturb views into the model so the objective sees the change
    fflat = model.field.flat
    for name, cols in (("density", slice(0, 1)), ("color", slice(1, 13))):
        sub_idx = np.arange(fflat.size).reshape(fflat.shape)[:, cols].reshape(-1)
        g = grads.field.reshape(-1)[sub_idx]
        top = sub_idx[np.argsort(-np.abs(g), kind="stable")[: n_entries // 2]]
        rand = rng.choice(sub_idx, n_entries - len(top), replace=False)
        idx = np.unique(np.concatenate([top, rand]))
        fd = np.array([central_difference(objective, fflat.reshape(-1), i, step_grid) for i in idx])
        floor = max(1e-3 * np.max(np.abs(g)), 1e-8)
        errors[name] = _rel_err(grads.field.reshape(-1)[idx], fd, floor)
    check_grid("attenuation", model.att.flat, grads.att)

    for key in PLANE_KEYS:
        an, fd = [], []
        for pl, pg in zip(model.planes, grads.planes):
            if key in ("w", "h"):
                attr = "width" if key == "w" else "height"
                box = np.array([getattr(pl, attr)])

                def obj(pl=pl, attr=attr, box=box):
                    setattr(pl, attr, float(box[0]))
                    return objective()

                fd.append(central_difference(obj, box, 0, step_plane))
                setattr(pl, attr, float(box[0]))
                an.append(pg[key][0])
            else:
                vec = {"p": pl.center, "n": pl.normal, "u": pl.up}[key]
                for j in range(3):
                    fd.append(central_difference(objective, vec, j, step_plane))
                    an.append(pg[key][j])
        an, fd = np.array(an), np.array(fd)
        errors[f"plane_{key}"] = _rel_err(an, fd, max(1e-3 * np.max(np.abs(an)), 1e-8))
    return GradcheckReport(errors)
