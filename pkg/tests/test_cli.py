import os
import struct
import zlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from reflnerf.cli import EXIT_CONFIG, EXIT_DATA, main
from reflnerf.config import Config, ConfigError
from reflnerf.field import AttenuationField, VoxelRadianceField, write_checkpoint
from reflnerf.metrics import psnr, ssim
from reflnerf.optim import read_log
from reflnerf.scenes import Dataset, dataset_files, read_ppm

TINY = """# small smoke configuration
scene = window-room
width = 16
height = 16
supersample = 1
n_train = 3
n_val = 1
n_outside = 1
grid_res = 12
atten_res = 8
n_samples = 24
n_reflect_samples = 24
n_eval_samples = 24
n_phase_a = 3
n_phase_b = 3
n_phase_c = 4
patches_per_iter = 2
"""


def png_pixels(path):
    """Decode the filter-0 RGB PNGs the renderer writes."""
    buf = path.read_bytes()
    w, h = struct.unpack(">II", buf[16:24])
    pos, idat = 8, b""
    while pos < len(buf):
        (n,) = struct.unpack(">I", buf[pos:pos + 4])
        if buf[pos + 4:pos + 8] == b"IDAT":
            idat += buf[pos + 8:pos + 8 + n]
        pos += 12 + n
    raw = np.frombuffer(zlib.decompress(idat), np.uint8).reshape(h, 1 + 3 * w)
    assert np.all(raw[:, 0] == 0)
    return raw[:, 1:].reshape(h, w, 3)


@pytest.fixture(scope="module")
def tiny(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "tiny.cfg"
    cfg.write_text(TINY)
    assert main(["generate", "--config", str(cfg), str(root / "data")]) == 0
    return root, cfg


def test_generate_counts_for_default_split_sizes(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("width = 12\nheight = 12\nsupersample = 1\n")
    assert main(["generate", "--config", str(cfg), str(tmp_path / "d")]) == 0
    ds = Dataset.load(tmp_path / "d")
    assert [len(ds.split(s)) for s in ("inside-train", "inside-val", "outside")] == [12, 4, 4]
    assert all(len(v.images) == 4 for s in ds.views.values() for v in s)


def test_generate_is_byte_identical(tiny, tmp_path):
    root, cfg = tiny
    assert main(["generate", "--config", str(cfg), str(tmp_path / "again")]) == 0
    a = dataset_files(root / "data")
    b = dataset_files(tmp_path / "again")
    assert [os.path.relpath(p, root / "data") for p in a] == [os.path.relpath(p, tmp_path / "again") for p in b]
    for x, y in zip(a, b):
        assert open(x, "rb").read() == open(y, "rb").read()


def test_generate_unwritable_dir(tiny, tmp_path, capsys):
    _, cfg = tiny
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["generate", "--config", str(cfg), str(blocker / "sub")]) == EXIT_DATA
    assert str(blocker) in capsys.readouterr().err


def test_bad_config_exit_code(tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("grid_res = -3\n")
    assert main(["generate", "--config", str(bad), str(tmp_path / "o")]) == EXIT_CONFIG
    bad.write_text("unknown_key = 1\n")
    assert main(["generate", "--config", str(bad), str(tmp_path / "o")]) == EXIT_CONFIG
    bad.write_text("scene = nowhere\n")
    assert main(["generate", "--config", str(bad), str(tmp_path / "o")]) == EXIT_CONFIG


def test_missing_dataset_exit_code(tiny, tmp_path):
    _, cfg = tiny
    assert main(["train", "--config", str(cfg), str(tmp_path / "none"), str(tmp_path / "o")]) == EXIT_DATA


def test_train_toggles(tiny):
    root, cfg = tiny
    out = root / "noedge"
    assert main(["train", "--config", str(cfg), "--no-edge-loss", "--no-plane-refine",
                 str(root / "data"), str(out)]) == 0
    log = read_log(out / "train_log.csv")
    assert len(log) == 10 and all(r["lambda_edge"] == 0 for r in log)
    from reflnerf.optim import init_model, load_model
    from reflnerf.scenes import preset_scene
    ds = Dataset.load(root / "data")
    sc = preset_scene("window-room")
    init = init_model(Config.from_text(TINY), sc.bbox_min, sc.bbox_max, ds.manifest.plane_segments()).planes[0]
    for name in ("phase_A", "phase_B", "phase_C", "model"):
        model, state = load_model(out / f"{name}.rfl")
        assert state is not None
        for a, b in ((model.planes[0].center, init.center), (model.planes[0].normal, init.normal),
                     (model.planes[0].up, init.up)):
            np.testing.assert_array_equal(a, b)


def test_train_render_eval_round(tiny):
    root, cfg = tiny
    out = root / "run"
    assert main(["train", "--config", str(cfg), str(root / "data"), str(out)]) == 0
    log = read_log(out / "train_log.csv")
    assert [r["lambda_edge"] for r in log][:3] == [0, 0, 0]
    # render twice: byte-identical panels
    for tag in ("r1", "r2"):
        assert main(["render", str(out / "model.rfl"), str(root / tag), "--dataset", str(root / "data")]) == 0
    names = sorted(os.listdir(root / "r1"))
    assert {n.split("_inside")[0] for n in names if n.endswith(".png")} == \
        {"rgb", "rgb_R", "alpha", "alpha_R", "rgb_composite", "depth"}
    for n in names:
        assert (root / "r1" / n).read_bytes() == (root / "r2" / n).read_bytes()
    assert main(["eval", str(out / "model.rfl"), str(root / "data"), "--out", str(root / "eval.csv")]) == 0
    text = (root / "eval.csv").read_text()
    assert text.splitlines()[0] == "split,view,psnr,ssim,depth_mae,ghost_ratio,lpips"
    assert "inside-val,mean" in text and "outside,mean" in text


def test_zero_density_checkpoint_renders_black(tiny, tmp_path):
    root, _ = tiny
    f = VoxelRadianceField((4, 4, 4), [-9.5, -5.5, -7.5], [9.5, 5.5, 14])
    f.data[..., 0] = -800.0
    a = AttenuationField((4, 4, 4), [-9.5, -5.5, -7.5], [9.5, 5.5, 14])
    write_checkpoint(tmp_path / "zero.rfl", f, a, [])
    assert main(["render", str(tmp_path / "zero.rfl"), str(tmp_path / "img"), "--dataset",
                 str(root / "data"), "--config", str(root / "tiny.cfg")]) == 0
    comp = [p for p in os.listdir(tmp_path / "img") if p.startswith("rgb_composite")]
    assert comp
    for p in comp:
        assert np.all(png_pixels(tmp_path / "img" / p) == 0)


def test_bad_checkpoint_exit_code(tiny, tmp_path):
    root, cfg = tiny
    (tmp_path / "junk.rfl").write_bytes(b"junk")
    assert main(["eval", "--config", str(cfg), str(tmp_path / "junk.rfl"), str(root / "data")]) == EXIT_DATA


def test_eval_missing_split(tiny, tmp_path, capsys):
    root, cfg = tiny
    assert main(["render", "--config", str(cfg), str(root / "run" / "model.rfl"), str(tmp_path),
                 "--dataset", str(root / "data"), "--split", "backyard"]) == EXIT_DATA
    assert "backyard" in capsys.readouterr().err


def test_ground_truth_against_itself(tiny):
    root, _ = tiny
    for v in Dataset.load(root / "data").split("inside-val"):
        gt = v.images["composite"]
        assert psnr(gt, gt) == 99.0 and ssim(gt, gt) == pytest.approx(1.0)


def test_gradcheck_command(capsys):
    assert main(["gradcheck", "--seeds", "1"]) == 0
    assert "PASS" in capsys.readouterr().out


def test_ppm_written_by_generate_is_readable(tiny):
    root, _ = tiny
    img = read_ppm(root / "data" / "inside-train" / "000_composite.ppm")
    assert img.shape == (16, 16, 3)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 512), st.floats(1e-6, 10), st.booleans(), st.integers(0, 2 ** 31),
       st.sampled_from(["window-room", "mirror-box"]))
def test_config_text_round_trip(res, lr, flag, seed, scene):
    cfg = Config(scene=scene, grid_res=res, lr_grid=lr, edge_loss=flag, seed=seed)
    assert Config.from_text(cfg.to_text()) == cfg


def test_config_rejects_garbage():
    with pytest.raises(ConfigError):
        Config.from_text("grid_res = many\n")
    with pytest.raises(ConfigError):
        Config.from_text("just words\n")
