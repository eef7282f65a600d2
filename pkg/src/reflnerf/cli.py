"""Batch entry points: generate, train, render, eval, gradcheck."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .config import Config, ConfigError
from .field import BadCheckpoint
from .metrics import EvalRow, depth_error, ghost_density_score, psnr, report_csv, ssim, summarize
from .optim import (NonFiniteGradient, TrainingData, finite_difference_check, init_model,
                    load_model, run_schedule)
from .renderer import RenderSettings, SceneModel, render_batched
from .scenes import (Camera, Dataset, SplitMissing, UnknownPreset, build_manifest, preset_scene,
                     render_oracle_dataset, write_pfm, write_png)

log = logging.getLogger("reflnerf")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
CONFIG_NAME = "config.txt"
PANELS = ("rgb", "rgb_R", "alpha", "alpha_R", "rgb_composite", "depth")


class DataError(RuntimeError):
    pass


def load_config(args, default_path: Path | None = None) -> Config:
    path = args.config or (default_path if default_path is not None and default_path.exists() else None)
    try:
        cfg = Config.from_text(Path(path).read_text(encoding="utf-8")) if path else Config()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    over = {}
    if args.seed is not None:
        over["seed"] = args.seed
    if args.threads is not None:
        over["threads"] = args.threads
    for flag, key in (("no_edge_loss", "edge_loss"), ("no_plane_refine", "plane_refine"),
                      ("no_scheduling", "scheduling"), ("no_reflection", "reflection_rays")):
        if getattr(args, flag):
            over[key] = False
    return cfg.replace(**over) if over else cfg


def apply_threads(cfg: Config) -> None:
    import numba
    n = cfg.threads or numba.config.NUMBA_NUM_THREADS
    numba.set_num_threads(max(1, min(n, numba.config.NUMBA_NUM_THREADS)))


def scene_far(cfg: Config, scene) -> float:
    return cfg.far if cfg.far > 0 else scene.far


def render_settings(cfg: Config, scene, samples: int | None = None) -> RenderSettings:
    k = cfg.n_eval_samples if samples is None else samples
    return RenderSettings(near=cfg.near, far=scene_far(cfg, scene), n_samples=k, n_reflect_samples=k,
                          reflections=cfg.reflection_rays)


def render_view(model: SceneModel, cam: Camera, settings: RenderSettings):
    origins, dirs = cam.pixel_rays()
    return render_batched(model, origins, dirs, settings).reshape(cam.height, cam.width)


# --- commands ----------------------------------------------------------------

def cmd_generate(cfg: Config, out_dir) -> list[str]:
    scene = preset_scene(cfg.scene)
    counts = {"inside-train": cfg.n_train, "inside-val": cfg.n_val, "outside": cfg.n_outside}
    manifest = build_manifest(scene, counts, cfg.seed, cfg.width, cfg.height, cfg.supersample)
    render_oracle_dataset(scene, manifest, out_dir)
    return [f for split in manifest.images.values() for view in split for f in view.values()]


def cmd_train(cfg: Config, dataset_dir, out_dir):
    ds = Dataset.load(dataset_dir)
    scene = preset_scene(ds.manifest.scene)
    train = ds.split("inside-train")
    data = TrainingData([v.camera for v in train], [v.images["composite"] for v in train])
    model = init_model(cfg, scene.bbox_min, scene.bbox_max, ds.manifest.plane_segments())
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / CONFIG_NAME).write_text(cfg.to_text(), encoding="utf-8")
    return run_schedule(cfg, data, model, scene_far(cfg, scene), out, progress_every=500)


def evaluate(model: SceneModel, ds: Dataset, settings: RenderSettings) -> list[EvalRow]:
    """Inside-val composites against GT composites; outside primaries against reflection-free GT."""
    regions = ds.manifest.regions
    ghost = (ghost_density_score(model.field, regions["ghost"], regions["reference"])
             if regions else float("nan"))
    rows = []
    for split, pred_key, gt_key in (("inside-val", "composite", "composite"),
                                    ("outside", "primary", "reflection_free")):
        if split not in ds.views:
            continue
        for i, view in enumerate(ds.split(split)):
            b = render_view(model, view.camera, settings)
            pred, gt = np.clip(getattr(b, pred_key), 0, 1), view.images[gt_key]
            mae, _ = depth_error(b.depth, view.images["depth"])
            rows.append(EvalRow(split, f"{i:03d}", psnr(pred, gt), ssim(pred, gt), mae, ghost))
    if not rows:
        raise SplitMissing("dataset has neither an inside-val nor an outside split")
    return summarize(rows)


def cmd_eval(cfg: Config, checkpoint, dataset_dir, out_csv=None) -> str:
    model, _ = load_model(checkpoint)
    ds = Dataset.load(dataset_dir)
    text = report_csv(evaluate(model, ds, render_settings(cfg, preset_scene(ds.manifest.scene))))
    if out_csv is not None:
        Path(out_csv).parent.mkdir(parents=True, exist_ok=True)
        Path(out_csv).write_text(text, encoding="utf-8")
    return text


def depth_to_gray(depth: np.ndarray, far: float) -> np.ndarray:
    return np.repeat(np.clip(depth / far, 0.0, 1.0)[..., None], 3, axis=-1)


def write_panels(bundle, out_dir, tag: str, far: float) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    imgs = {"rgb": bundle.primary, "rgb_R": bundle.reflected,
            "alpha": np.repeat(bundle.attenuation[..., None], 3, axis=-1),
            "alpha_R": bundle.attenuated_reflection, "rgb_composite": bundle.composite,
            "depth": depth_to_gray(bundle.depth, far)}
    paths = []
    for name in PANELS:
        p = out / f"{name}_{tag}.png"
        write_png(p, np.clip(imgs[name], 0.0, 1.0))
        paths.append(p)
    write_pfm(out / f"depth_{tag}.pfm", bundle.depth)
    return paths


def cmd_render(cfg: Config, checkpoint, out_dir, cameras: list[tuple[str, Camera]]) -> list[Path]:
    model, _ = load_model(checkpoint)
    scene = preset_scene(cfg.scene)
    settings = render_settings(cfg, scene)
    paths = []
    for tag, cam in cameras:
        paths += write_panels(render_view(model, cam, settings), out_dir, tag, settings.far)
    return paths


def cmd_gradcheck(seeds: int) -> bool:
    ok = True
    for s in range(seeds):
        t = time.perf_counter()
        rep = finite_difference_check(s)
        errs = " ".join(f"{k}={v:.2e}" for k, v in rep.errors.items())
        print(f"seed {s}: {'PASS' if rep.passed else 'FAIL'} ({time.perf_counter() - t:.1f}s) {errs}")
        ok &= rep.passed
    return ok


# --- argument parsing --------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value config file")
    common.add_argument("--seed", type=int)
    common.add_argument("--threads", type=int, help="worker count (default: all cores)")
    common.add_argument("--no-edge-loss", action="store_true")
    common.add_argument("--no-plane-refine", action="store_true")
    common.add_argument("--no-scheduling", action="store_true")
    common.add_argument("--no-reflection", action="store_true", help="single-ray baseline")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="reflnerf", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    g = sub.add_parser("generate", parents=[common], help="render the oracle dataset")
    g.add_argument("out_dir")
    t = sub.add_parser("train", parents=[common], help="run the three-phase schedule")
    t.add_argument("dataset_dir")
    t.add_argument("out_dir")
    r = sub.add_parser("render", parents=[common], help="write the six panels per view")
    r.add_argument("checkpoint")
    r.add_argument("out_dir")
    src = r.add_mutually_exclusive_group(required=True)
    src.add_argument("--camera", help="JSON file with one camera or a list of cameras")
    src.add_argument("--dataset", help="dataset dir; renders the views of --split")
    r.add_argument("--split", default="inside-val")
    e = sub.add_parser("eval", parents=[common], help="metrics CSV for a checkpoint")
    e.add_argument("checkpoint")
    e.add_argument("dataset_dir")
    e.add_argument("--out", help="write the CSV here (default: stdout)")
    c = sub.add_parser("gradcheck", parents=[common], help="finite-difference adjoint check")
    c.add_argument("--seeds", type=int, default=3)
    return p


def _cameras(args) -> list[tuple[str, Camera]]:
    if args.camera:
        try:
            spec = json.loads(Path(args.camera).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"cannot read camera spec {args.camera}: {exc}") from exc
        spec = spec if isinstance(spec, list) else [spec]
        return [(f"{i:03d}", Camera.from_dict(c)) for i, c in enumerate(spec)]
    ds = Dataset.load(args.dataset)
    return [(f"{args.split}_{i:03d}", v.camera) for i, v in enumerate(ds.split(args.split))]


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose or args.command == "train" else logging.WARNING,
                        format="%(message)s")
    try:
        ckpt_dir = Path(args.checkpoint).parent if hasattr(args, "checkpoint") else None
        cfg = load_config(args, ckpt_dir / CONFIG_NAME if ckpt_dir is not None else None)
        apply_threads(cfg)
        if args.command == "generate":
            files = cmd_generate(cfg, args.out_dir)
            print(f"wrote {len(files)} images to {args.out_dir}")
        elif args.command == "train":
            res = cmd_train(cfg, args.dataset_dir, args.out_dir)
            print(f"final L_photo {res.log[-1]['L_photo']:.6f}; checkpoint {Path(args.out_dir) / 'model.rfl'}")
        elif args.command == "render":
            paths = cmd_render(cfg, args.checkpoint, args.out_dir, _cameras(args))
            print(f"wrote {len(paths)} panels to {args.out_dir}")
        elif args.command == "eval":
            text = cmd_eval(cfg, args.checkpoint, args.dataset_dir, args.out)
            if args.out is None:
                sys.stdout.write(text)
        elif args.command == "gradcheck":
            return EXIT_OK if cmd_gradcheck(args.seeds) else EXIT_NUMERIC
    except (ConfigError, UnknownPreset) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NonFiniteGradient, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, SplitMissing, BadCheckpoint, OSError, ValueError, KeyError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
