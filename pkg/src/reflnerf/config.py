"""Flat ``key = value`` run configuration."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields


class ConfigError(ValueError):
    pass


@dataclass
class Config:
    scene: str = "window-room"
    width: int = 64
    height: int = 64
    supersample: int = 4
    n_train: int = 12
    n_val: int = 4
    n_outside: int = 4

    grid_res: int = 64
    atten_res: int = 64
    n_samples: int = 128
    n_reflect_samples: int = 128
    n_eval_samples: int = 256
    near: float = 0.05
    far: float = 0.0
    init_density: float = 1e-4

    n_phase_a: int = 2000
    n_phase_b: int = 2000
    n_phase_c: int = 4000
    lr_grid: float = 1e-2
    lr_plane: float = 1e-3
    edge_weight: float = 0.5
    clip_norm: float = 10.0
    patches_per_iter: int = 4
    patch_size: int = 8
    jitter: bool = True

    plane_init_angle_deg: float = 2.0
    plane_init_shift: float = 0.02
    plane_anneal: bool = True

    seed: int = 0
    threads: int = 0

    edge_loss: bool = True
    plane_refine: bool = True
    scheduling: bool = True
    reflection_rays: bool = True

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, bool) or isinstance(v, str):
                continue
            if f.name in ("far", "threads", "seed", "plane_init_angle_deg", "plane_init_shift",
                          "n_phase_a", "n_phase_b", "n_phase_c", "n_val", "n_outside"):
                if v < 0:
                    raise ConfigError(f"{f.name} must be >= 0, got {v}")
            elif not v > 0:
                raise ConfigError(f"{f.name} must be positive, got {v}")
        if self.edge_weight < 0:
            raise ConfigError("edge_weight must be >= 0")
        if self.patch_size < 3:
            raise ConfigError("patch_size must be >= 3")

    @property
    def total_iters(self) -> int:
        return self.n_phase_a + self.n_phase_b + self.n_phase_c

    def replace(self, **kw) -> "Config":
        return dataclasses.replace(self, **kw)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, bool):
                v = "true" if v else "false"
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, **overrides) -> "Config":
        values = {}
        types = {f.name: f.type for f in fields(cls)}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected key = value")
            key, raw = (s.strip() for s in line.split("=", 1))
            if key not in types:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            values[key] = _parse(types[key], raw, key)
        values.update(overrides)
        return cls(**values)


def _parse(typ, raw: str, key: str):
    typ = typ if isinstance(typ, str) else typ.__name__
    try:
        if typ == "bool":
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if typ == "int":
            return int(raw)
        if typ == "float":
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {typ}") from exc
