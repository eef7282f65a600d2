"""Synthetic scenes, the analytic one-bounce ray tracer, camera splits and dataset files."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import EPS_OFFSET, PlaneSegment, Ray, intersect_planes_batch, reflect_direction

SPLITS = ("inside-train", "inside-val", "outside")
CHANNELS = ("composite", "reflection_free", "reflection", "depth")


class UnknownPreset(KeyError):
    pass


class SplitMissing(KeyError):
    pass


@dataclass
class Box:
    lo: np.ndarray
    hi: np.ndarray
    albedo: np.ndarray
    name: str = ""

    def __post_init__(self):
        self.lo = np.asarray(self.lo, dtype=np.float64)
        self.hi = np.asarray(self.hi, dtype=np.float64)
        self.albedo = np.asarray(self.albedo, dtype=np.float64)

    def intersect(self, origins, dirs):
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / dirs
            t0 = (self.lo - origins) * inv
            t1 = (self.hi - origins) * inv
        # axis-parallel rays: inside the slab -> unbounded, outside -> empty
        par = dirs == 0
        inside = (origins >= self.lo) & (origins <= self.hi)
        t0 = np.where(par, np.where(inside, -np.inf, np.inf), t0)
        t1 = np.where(par, np.where(inside, np.inf, -np.inf), t1)
        tn = np.minimum(t0, t1).max(axis=1)
        tf = np.maximum(t0, t1).min(axis=1)
        t = np.where(tn > 0, tn, tf)
        return np.where((tf >= tn) & (t > 0), t, np.inf)


@dataclass
class Sphere:
    center: np.ndarray
    radius: float
    albedo: np.ndarray
    name: str = ""

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64)
        self.albedo = np.asarray(self.albedo, dtype=np.float64)

    def intersect(self, origins, dirs):
        oc = origins - self.center
        b = np.sum(oc * dirs, axis=1)
        c = np.sum(oc * oc, axis=1) - self.radius ** 2
        disc = b * b - c
        root = np.sqrt(np.maximum(disc, 0.0))
        t0, t1 = -b - root, -b + root
        t = np.where(t0 > 0, t0, t1)
        return np.where((disc >= 0) & (t > 0), t, np.inf)


@dataclass
class Scene:
    name: str
    primitives: list
    reflectors: list[PlaneSegment]
    reflectance: list[float]
    background: np.ndarray = field(default_factory=lambda: np.zeros(3))
    bbox_min: np.ndarray = None
    bbox_max: np.ndarray = None
    ghost_source: str = ""
    rig: dict = field(default_factory=dict)

    def __post_init__(self):
        self.background = np.asarray(self.background, dtype=np.float64)
        for rho in self.reflectance:
            if not 0.0 <= rho <= 1.0:
                raise ValueError(f"reflectance {rho} outside [0, 1]")

    @property
    def far(self) -> float:
        return float(np.linalg.norm(self.bbox_max - self.bbox_min))

    def primitive(self, name: str):
        for p in self.primitives:
            if p.name == name:
                return p
        raise KeyError(name)

    def with_reflectance(self, scale: float) -> "Scene":
        return Scene(self.name, self.primitives, self.reflectors,
                     [r * scale for r in self.reflectance], self.background,
                     self.bbox_min, self.bbox_max, self.ghost_source, self.rig)

    def ghost_regions(self):
        """(reference box, mirrored ghost box) for the tagged source object and the first reflector."""
        src = self.primitive(self.ghost_source)
        plane = self.reflectors[0]
        corners = np.array([[x, y, z] for x in (src.lo[0], src.hi[0])
                            for y in (src.lo[1], src.hi[1]) for z in (src.lo[2], src.hi[2])])
        n = plane.normal
        mirrored = corners - 2.0 * ((corners - plane.center) @ n)[:, None] * n
        return (src.lo.copy(), src.hi.copy()), (mirrored.min(axis=0), mirrored.max(axis=0))


def _box(lo, hi, albedo, name=""):
    return Box(lo, hi, albedo, name)


def _shell(lo, hi, t, colors):
    """Six slabs of thickness ``t`` enclosing the open region [lo, hi]; colors: -x,+x,-y,+y,-z,+z."""
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    out = []
    for axis in range(3):
        for side, col in zip((0, 1), colors[2 * axis:2 * axis + 2]):
            if col is None:
                continue
            a, b = lo - t, hi + t
            if side == 0:
                b = b.copy()
                b[axis] = lo[axis]
            else:
                a = a.copy()
                a[axis] = hi[axis]
            out.append(_box(a, b, col, f"wall{'xyz'[axis]}{'-+'[side]}"))
    return out


def _window_room() -> Scene:
    room_lo, room_hi = np.array([-9.0, -5.0, -7.0]), np.array([9.0, 5.0, 6.0])
    prims = _shell(room_lo, room_hi, 0.5,
                   [(0.55, 0.45, 0.35), (0.35, 0.45, 0.55), (0.40, 0.38, 0.34),
                    (0.78, 0.78, 0.74), (0.62, 0.58, 0.45), None])
    # dividing wall at z in [6, 6.4] with a 16 x 9 window hole
    z0, z1 = 6.0, 6.4
    wall = (0.68, 0.66, 0.60)
    prims += [
        _box((-9.5, -5.5, z0), (-8.0, 5.5, z1), wall, "window-wall-left"),
        _box((8.0, -5.5, z0), (9.5, 5.5, z1), wall, "window-wall-right"),
        _box((-8.0, -5.5, z0), (8.0, -4.5, z1), wall, "window-wall-low"),
        _box((-8.0, 4.5, z0), (8.0, 5.5, z1), wall, "window-wall-high"),
    ]
    # yard outside the window
    yard_lo, yard_hi = np.array([-9.0, -5.0, z1]), np.array([9.0, 5.0, 13.5])
    prims += [p for p in _shell(yard_lo, yard_hi, 0.5,
                                [(0.30, 0.50, 0.30), (0.30, 0.45, 0.35), (0.35, 0.42, 0.30),
                                 (0.45, 0.55, 0.62), None, (0.40, 0.55, 0.72)])]
    for p in prims[-5:]:
        p.name = "yard-" + p.name
    prims += [
        _box((1.5, -5.0, 10.0), (4.5, 1.5, 11.0), (0.20, 0.42, 0.18), "tree"),
        _box((-8.0, -5.0, 11.5), (-5.5, -2.0, 13.0), (0.50, 0.30, 0.25), "shed"),
        # interior
        _box((-4.5, -5.0, 2.7), (-1.5, -0.5, 4.2), (0.62, 0.36, 0.20), "shelf"),
        _box((-4.2, -0.5, 2.9), (-1.8, 0.3, 4.0), (0.25, 0.30, 0.60), "shelf-top"),
        _box((2.5, -5.0, -3.0), (6.0, -3.0, 0.5), (0.30, 0.55, 0.55), "table"),
        _box((-8.9, -2.0, -4.0), (-8.7, 2.0, -1.0), (0.75, 0.25, 0.30), "poster-left"),
        _box((-3.0, -1.0, -6.9), (3.0, 2.5, -6.7), (0.20, 0.25, 0.40), "poster-back"),
        _box((8.7, -1.5, 1.0), (8.9, 1.5, 4.0), (0.70, 0.65, 0.20), "poster-right"),
        Sphere((-5.5, -3.8, -4.0), 1.2, (0.80, 0.50, 0.20), "ball"),
    ]
    window = PlaneSegment((0.0, 0.0, 6.2), (0.0, 0.0, 1.0), (0.0, 1.0, 0.0), 16.0, 9.0)
    # inward ring: half the views face the window, half see the mirrored walls directly
    rig = {
        "center": [0.0, -0.5, -0.5], "target": [1.5, -0.5, 1.5], "radius": 3.0,
        "target_jitter": 0.3, "height_jitter": 0.6, "pitch": -0.1, "fov": 75.0, "arc": 360.0,
        "outside_lo": [-4.0, -1.5, 10.8], "outside_hi": [0.0, 1.5, 12.3],
        "outside_target_lo": [-3.0, -3.0, -3.0], "outside_target_hi": [1.0, 0.0, 0.0],
        "outside_fov": 55.0,
    }
    return Scene("window-room", prims, [window], [0.4], np.zeros(3),
                 np.array([-9.5, -5.5, -7.5]), np.array([9.5, 5.5, 14.0]), "shelf", rig)


def _mirror_box() -> Scene:
    lo, hi = np.array([-5.0, -4.0, -5.0]), np.array([5.0, 4.0, 5.0])
    prims = _shell(lo, hi, 0.5, [(0.70, 0.30, 0.30), (0.30, 0.30, 0.70), (0.45, 0.45, 0.40),
                                 (0.80, 0.80, 0.75), (0.60, 0.55, 0.35), None])
    prims += [
        _box((-3.5, -4.0, 1.0), (-1.0, -1.0, 3.0), (0.20, 0.70, 0.25), "green-box"),
        _box((1.5, -4.0, -2.5), (3.5, 0.0, -0.5), (0.75, 0.20, 0.20), "red-box"),
        _box((-2.0, -1.0, -4.9), (2.0, 2.0, -4.8), (0.20, 0.25, 0.55), "poster"),
    ]
    mirror = PlaneSegment((0.0, 0.0, 5.0), (0.0, 0.0, 1.0), (0.0, 1.0, 0.0), 10.0, 8.0)
    rig = {
        "center": [0.0, -0.5, -1.0], "radius": 1.5, "height_jitter": 0.4, "pitch": -0.1,
        "fov": 60.0,
        "outside_lo": [-2.0, -1.5, 7.0], "outside_hi": [2.0, 1.5, 9.0],
        "outside_target_lo": [-2.0, -2.0, -3.0], "outside_target_hi": [2.0, 0.0, 0.0],
        "outside_fov": 50.0,
    }
    return Scene("mirror-box", prims, [mirror], [1.0], np.zeros(3),
                 np.array([-5.5, -4.5, -5.5]), np.array([5.5, 4.5, 10.0]), "green-box", rig)


PRESETS = {"window-room": _window_room, "mirror-box": _mirror_box}


def preset_scene(name: str) -> Scene:
    try:
        return PRESETS[name]()
    except KeyError:
        raise UnknownPreset(f"unknown scene preset {name!r}; choose from {sorted(PRESETS)}") from None


# --- cameras -----------------------------------------------------------------

@dataclass
class Camera:
    position: np.ndarray
    look_at: np.ndarray
    up: np.ndarray
    fov_deg: float
    width: int
    height: int

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64)
        self.look_at = np.asarray(self.look_at, dtype=np.float64)
        self.up = np.asarray(self.up, dtype=np.float64)
        if not 10.0 < self.fov_deg < 170.0:
            raise ValueError(f"fov {self.fov_deg} outside (10, 170) degrees")
        fwd = self.look_at - self.position
        if np.linalg.norm(fwd) < 1e-9 or np.linalg.norm(np.cross(fwd, self.up)) < 1e-9:
            raise ValueError("degenerate look direction")

    def basis(self):
        fwd = self.look_at - self.position
        fwd = fwd / np.linalg.norm(fwd)
        right = np.cross(fwd, self.up)
        right /= np.linalg.norm(right)
        return fwd, right, np.cross(right, fwd)

    def pixel_rays(self, width=None, height=None, supersample: int = 1):
        """Unit rays through pixel (sub-)centers, row 0 at the top.

        Returns arrays of shape (H*W, 3), or (H*W, n*n, 3) when supersampling.
        """
        width = self.width if width is None else width
        height = self.height if height is None else height
        fwd, right, up = self.basis()
        tan = np.tan(np.radians(self.fov_deg) / 2)
        aspect = width / height
        sub = (np.arange(supersample) + 0.5) / supersample
        px = (np.arange(width)[:, None] + sub[None, :]).reshape(-1)
        py = (np.arange(height)[:, None] + sub[None, :]).reshape(-1)
        sx = (2 * px / width - 1) * tan * aspect
        sy = (1 - 2 * py / height) * tan
        # (H*n, W*n) grid, then regroup sub-samples per pixel
        d = fwd + sx[None, :, None] * right + sy[:, None, None] * up
        d = d / np.linalg.norm(d, axis=-1, keepdims=True)
        n = supersample
        d = d.reshape(height, n, width, n, 3).transpose(0, 2, 1, 3, 4).reshape(height * width, n * n, 3)
        if n == 1:
            d = d[:, 0]
        return np.broadcast_to(self.position, d.shape).copy(), d

    def to_dict(self) -> dict:
        return {"position": self.position.tolist(), "look_at": self.look_at.tolist(),
                "up": self.up.tolist(), "fov": self.fov_deg, "width": self.width, "height": self.height}

    @classmethod
    def from_dict(cls, d: dict) -> "Camera":
        return cls(d["position"], d["look_at"], d["up"], d["fov"], d["width"], d["height"])


def _orbit(rig, count, seed, offset, width, height, stream):
    """Jittered arc of poses.  With a ``target`` the arc surrounds that point and
    every camera looks at it; otherwise cameras sit around ``center`` facing out."""
    rng = np.random.default_rng([seed, stream])
    center = np.asarray(rig["center"])
    arc = np.radians(rig.get("arc", 360.0))
    step = arc / count
    start = -arc / 2 + (0.5 * step if arc < 2 * np.pi else 0.0)
    cams = []
    for i in range(count):
        ang = start + (i + offset) * step + rng.uniform(-0.2, 0.2) * step
        out = np.array([np.sin(ang), 0.0, np.cos(ang)])
        lift = np.array([0, rng.uniform(-1, 1) * rig["height_jitter"], 0])
        if "target" in rig:
            aim = np.asarray(rig["target"], dtype=float)
            pos = aim - rig["radius"] * out + lift
            target = aim + rng.uniform(-1, 1, 3) * rig["target_jitter"]
        else:
            pos = center + rig["radius"] * out + lift
            target = pos + out + np.array([0.0, rig["pitch"] + rng.uniform(-0.05, 0.05), 0.0])
        cams.append(Camera(pos, target, (0, 1, 0), rig["fov"], width, height))
    return cams


def generate_split_cameras(scene: Scene, split: str, count: int, seed: int,
                           width: int = 64, height: int = 64, n_train: int | None = None) -> list[Camera]:
    """Camera poses for one split.

    Inside splits sit on a jittered horizontal orbit (see ``_orbit``); validation
    poses are shifted by half an orbit step from the training slots.  Outside
    poses look back into the room through the first reflector.
    """
    rig = scene.rig
    if split == "inside-train":
        return _orbit(rig, count, seed, 0.0, width, height, 0)
    if split == "inside-val":
        # val slots interleave with the training slots
        n_train = n_train or max(count, 12)
        cams = _orbit(rig, n_train, seed, 0.5, width, height, 1)
        pick = np.linspace(0, n_train, count, endpoint=False).astype(int)
        return [cams[i] for i in pick]
    if split == "outside":
        rng = np.random.default_rng([seed, 2])
        plane = scene.reflectors[0]
        cams = []
        while len(cams) < count:
            pos = rng.uniform(rig["outside_lo"], rig["outside_hi"])
            target = rng.uniform(rig["outside_target_lo"], rig["outside_target_hi"])
            d = target - pos
            d /= np.linalg.norm(d)
            t, idx = intersect_planes_batch(pos[None], d[None], [plane])
            if idx[0] < 0 or t[0] > np.linalg.norm(target - pos):
                continue
            cams.append(Camera(pos, target, (0, 1, 0), rig["outside_fov"], width, height))
        return cams
    raise SplitMissing(f"unknown split {split!r}")


def window_between(scene: Scene, cam: Camera) -> bool:
    """True when the first reflector separates ``cam`` from the room interior."""
    plane = scene.reflectors[0]
    center = np.asarray(scene.rig["center"])
    s_cam = np.dot(cam.position - plane.center, plane.normal)
    s_room = np.dot(center - plane.center, plane.normal)
    return s_cam * s_room < 0


# --- oracle ------------------------------------------------------------------

def _trace_primitives(scene: Scene, origins, dirs):
    best_t = np.full(len(origins), np.inf)
    albedo = np.broadcast_to(scene.background, (len(origins), 3)).copy()
    for prim in scene.primitives:
        t = prim.intersect(origins, dirs)
        better = t < best_t
        best_t[better] = t[better]
        albedo[better] = prim.albedo
    return best_t, albedo


def oracle_trace_batch(scene: Scene, origins, dirs):
    """Analytic render of N rays: ``(composite, primary, reflection, depth)``."""
    origins = np.asarray(origins, dtype=np.float64).reshape(-1, 3)
    dirs = np.asarray(dirs, dtype=np.float64).reshape(-1, 3)
    depth, primary = _trace_primitives(scene, origins, dirs)
    reflection = np.zeros_like(primary)
    if scene.reflectors:
        t_r, idx = intersect_planes_batch(origins, dirs, scene.reflectors)
        rows = np.nonzero((idx >= 0) & (t_r < depth))[0]
        if len(rows):
            normals = np.stack([scene.reflectors[i].normal for i in idx[rows]])
            d = dirs[rows]
            flip = np.sum(d * normals, axis=1) > 0
            normals[flip] *= -1
            d_ref = reflect_direction(d, normals)
            d_ref /= np.linalg.norm(d_ref, axis=1, keepdims=True)
            x = origins[rows] + t_r[rows, None] * d
            _, alb = _trace_primitives(scene, x + EPS_OFFSET * d_ref, d_ref)
            rho = np.asarray(scene.reflectance)[idx[rows]]
            reflection[rows] = rho[:, None] * alb
    composite = np.clip(primary + reflection, 0.0, 1.0)
    return composite, primary, reflection, depth


def oracle_trace(scene: Scene, ray: Ray):
    c, p, r, d = oracle_trace_batch(scene, ray.origin[None], ray.direction[None])
    return c[0], p[0], r[0], float(d[0])


def oracle_images(scene: Scene, camera: Camera, supersample: int = 1):
    """Per-pixel area averages over ``supersample``^2 sub-rays; arrays shaped (H, W, ...)."""
    o, d = camera.pixel_rays(supersample=supersample)
    c, p, r, z = oracle_trace_batch(scene, o.reshape(-1, 3), d.reshape(-1, 3))
    h, w, m = camera.height, camera.width, supersample * supersample
    avg = lambda a: a.reshape(h, w, m, -1).mean(axis=2)  # noqa: E731
    return {"composite": avg(c), "reflection_free": avg(p), "reflection": avg(r),
            "depth": avg(z[:, None])[..., 0]}


# --- image files -------------------------------------------------------------

def to_8bit(img: np.ndarray) -> np.ndarray:
    return np.round(255.0 * np.clip(img, 0.0, 1.0)).astype(np.uint8)


def write_ppm(path, img: np.ndarray) -> None:
    data = to_8bit(img)
    h, w = data.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(data[..., :3]).tobytes())


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        buf = fh.read()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while buf[pos:pos + 1].isspace():
            pos += 1
        if buf[pos:pos + 1] == b"#":
            pos = buf.index(b"\n", pos) + 1
            continue
        end = pos
        while not buf[end:end + 1].isspace():
            end += 1
        tokens.append(buf[pos:end])
        pos = end
    if tokens[0] != b"P6":
        raise ValueError(f"{path}: not a binary PPM")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    pos += 1
    arr = np.frombuffer(buf, dtype=np.uint8, count=w * h * 3, offset=pos)
    return arr.reshape(h, w, 3).astype(np.float64) / maxval


def write_pfm(path, img: np.ndarray) -> None:
    img = np.asarray(img, dtype="<f4")
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"Pf\n{w} {h}\n-1.0\n".encode("ascii"))
        fh.write(np.ascontiguousarray(img[::-1]).tobytes())


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        kind = fh.readline().strip()
        w, h = map(int, fh.readline().split())
        scale = float(fh.readline())
        if kind != b"Pf":
            raise ValueError(f"{path}: only grayscale PFM is supported")
        dt = "<f4" if scale < 0 else ">f4"
        arr = np.frombuffer(fh.read(), dtype=dt, count=w * h)
    return arr.reshape(h, w)[::-1].astype(np.float64)


def write_png(path, img: np.ndarray) -> None:
    """Optional PNG export via the stdlib (zlib) only."""
    import struct
    import zlib

    data = to_8bit(img)
    if data.ndim == 2:
        data = np.repeat(data[..., None], 3, axis=2)
    h, w = data.shape[:2]
    raw = b"".join(b"\x00" + data[y].tobytes() for y in range(h))

    def chunk(tag, body):
        return struct.pack(">I", len(body)) + tag + body + struct.pack(">I", zlib.crc32(tag + body) & 0xFFFFFFFF)

    png = b"\x89PNG\r\n\x1a\n" + chunk(b"IHDR", struct.pack(">IIBBBBB", w, h, 8, 2, 0, 0, 0))
    png += chunk(b"IDAT", zlib.compress(raw, 9)) + chunk(b"IEND", b"")
    with open(path, "wb") as fh:
        fh.write(png)


# --- dataset -----------------------------------------------------------------

@dataclass
class DatasetManifest:
    scene: str
    splits: dict
    planes: list
    images: dict
    width: int = 64
    height: int = 64
    supersample: int = 4
    regions: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in self.splits:
            if name not in SPLITS:
                raise ValueError(f"split name {name!r} not in {SPLITS}")

    def to_json(self) -> str:
        return json.dumps({"scene": self.scene, "width": self.width, "height": self.height,
                           "supersample": self.supersample, "splits": self.splits,
                           "planes": self.planes, "images": self.images, "regions": self.regions},
                          indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "DatasetManifest":
        d = json.loads(text)
        return cls(d["scene"], d["splits"], d["planes"], d["images"], d["width"], d["height"],
                   d["supersample"], d.get("regions", {}))

    def cameras(self, split: str) -> list[Camera]:
        if split not in self.splits:
            raise SplitMissing(f"split {split!r} missing from manifest")
        return [Camera.from_dict(c) for c in self.splits[split]]

    def plane_segments(self) -> list[PlaneSegment]:
        return [PlaneSegment.from_record(p) for p in self.planes]


def build_manifest(scene: Scene, counts: dict, seed: int, width=64, height=64, supersample=4) -> DatasetManifest:
    n_train = counts.get("inside-train", 12)
    splits = {}
    for split, count in counts.items():
        if count <= 0:
            continue
        cams = generate_split_cameras(scene, split, count, seed, width, height, n_train=n_train)
        splits[split] = [c.to_dict() for c in cams]
    planes = []
    for pl, rho in zip(scene.reflectors, scene.reflectance):
        rec = pl.to_record()
        rec["reflectance"] = repr(float(rho))
        planes.append(rec)
    images = {s: [{ch: f"{s}/{i:03d}_{ch}.{'pfm' if ch == 'depth' else 'ppm'}" for ch in CHANNELS}
                  for i in range(len(v))] for s, v in splits.items()}
    regions = {}
    if scene.ghost_source:
        (rlo, rhi), (glo, ghi) = scene.ghost_regions()
        regions = {"reference": [rlo.tolist(), rhi.tolist()], "ghost": [glo.tolist(), ghi.tolist()]}
    return DatasetManifest(scene.name, splits, planes, images, width, height, supersample, regions)


def render_oracle_dataset(scene: Scene, manifest: DatasetManifest, out_dir, supersample: int | None = None):
    out = Path(out_dir)
    ss = manifest.supersample if supersample is None else supersample
    try:
        out.mkdir(parents=True, exist_ok=True)
        for split in manifest.splits:
            (out / split).mkdir(exist_ok=True)
            for cam, files in zip(manifest.cameras(split), manifest.images[split]):
                imgs = oracle_images(scene, cam, ss)
                for ch in CHANNELS:
                    path = out / files[ch]
                    if ch == "depth":
                        write_pfm(path, imgs[ch])
                    else:
                        write_ppm(path, imgs[ch])
        (out / "manifest.json").write_text(manifest.to_json(), encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write dataset to {out}: {exc}") from exc
    return manifest


@dataclass
class View:
    camera: Camera
    images: dict


class Dataset:
    def __init__(self, root, manifest: DatasetManifest, views: dict):
        self.root = Path(root)
        self.manifest = manifest
        self.views = views

    @classmethod
    def load(cls, root) -> "Dataset":
        root = Path(root)
        path = root / "manifest.json"
        if not path.exists():
            raise FileNotFoundError(f"no manifest at {path}")
        manifest = DatasetManifest.from_json(path.read_text(encoding="utf-8"))
        views = {}
        for split in manifest.splits:
            views[split] = []
            for cam, files in zip(manifest.cameras(split), manifest.images[split]):
                imgs = {ch: (read_pfm if ch == "depth" else read_ppm)(root / f) for ch, f in files.items()}
                views[split].append(View(cam, imgs))
        return cls(root, manifest, views)

    def split(self, name: str) -> list[View]:
        if name not in self.views:
            raise SplitMissing(f"split {name!r} missing from dataset at {self.root}")
        return self.views[name]


def dataset_files(root) -> list[str]:
    out = []
    for dirpath, _, files in os.walk(root):
        out += [os.path.join(dirpath, f) for f in files]
    return sorted(out)
