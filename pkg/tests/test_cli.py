import hashlib

import numpy as np
import pytest

from framegen import gradsuite
from framegen.cli import CliConfig, load_config, read_dataset, run
from framegen.data import decode_clip, encode_clip
from framegen.nncore import GradCheckReport

TINY = ["--n-frames", "5", "--height", "32", "--width", "32"]


def digest(directory):
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(directory.iterdir())}


def test_gen_data_deterministic(tmp_path):
    for name in ("a", "b"):
        assert run(["gen-data", "--out", str(tmp_path / name), "--clips", "3", "--seed", "7", *TINY]) == 0
    assert digest(tmp_path / "a") == digest(tmp_path / "b")
    assert len(digest(tmp_path / "a")) == 6
    run(["gen-data", "--out", str(tmp_path / "c"), "--clips", "3", "--seed", "8", *TINY])
    assert digest(tmp_path / "a") != digest(tmp_path / "c")
    clips = read_dataset(tmp_path / "a")
    assert clips[0].frames.shape == (5, 3, 32, 32) and clips[0].meta["depth"].shape == (5, 1, 32, 32)


def test_usage_errors_exit_1(capsys):
    assert run(["nope"]) == 1
    assert "usage" in capsys.readouterr().err
    assert run(["gen-data", "--bogus-flag"]) == 1
    assert run(["gen-data", "--height", "30"]) == 1
    assert run([]) == 1


def test_bad_threads_env(monkeypatch, tmp_path):
    monkeypatch.setenv("FRAMEGEN_THREADS", "many")
    assert run(["gen-data", "--out", str(tmp_path), "--clips", "1", *TINY]) == 1
    monkeypatch.setenv("FRAMEGEN_THREADS", "1")
    assert run(["gen-data", "--out", str(tmp_path), "--clips", "1", *TINY]) == 0


def test_runtime_errors_exit_2(tmp_path, capsys):
    assert run(["eval", "--data", str(tmp_path), "--ckpt", str(tmp_path / "missing.vfck")]) == 2
    (tmp_path / "bad.vfic").write_bytes(b"JUNKJUNK")
    assert run(["train", "--data", str(tmp_path), "--ae", str(tmp_path / "x")]) == 2
    assert "bad magic" in capsys.readouterr().err


# --- config ---------------------------------------------------------------


def test_empty_config_is_defaults(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("")
    assert load_config(p) == CliConfig()
    assert load_config(None) == CliConfig()


def test_precedence(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("lr = 0.001\n# comment\nseed=3\n\nablate = no_xattn\nfreeze_base = true\n")
    cfg = load_config(p, {"lr": 0.01, "seed": None})
    assert cfg.lr == 0.01 and cfg.seed == 3
    assert cfg.ablate == ("no_xattn",) and cfg.freeze_base
    assert load_config(p).lr == 0.001


def test_unknown_key_names_line(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("learning_rate = 0.1\n")
    with pytest.raises(ValueError, match=r"c.cfg:1: unknown key 'learning_rate'"):
        load_config(p)
    p.write_text("seed = 1\nbatch = lots\n")
    with pytest.raises(ValueError, match=r":2: bad value for batch"):
        load_config(p)
    p.write_text("seed 1\n")
    with pytest.raises(ValueError, match=r":1: expected key = value"):
        load_config(p)
    p.write_text("ablate = no_everything\n")
    with pytest.raises(ValueError, match=":1:"):
        load_config(p)


def test_config_file_via_cli(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("learning_rate = 1\n")
    assert run(["gen-data", "--config", str(cfg), "--out", str(tmp_path)]) == 1
    cfg.write_text("n_frames = 4\nheight = 32\nwidth = 32\nseed = 2\n")
    assert run(["gen-data", "--config", str(cfg), "--out", str(tmp_path / "d"), "--clips", "1"]) == 0
    assert read_dataset(tmp_path / "d")[0].frames.shape == (4, 3, 32, 32)


# --- end to end -----------------------------------------------------------


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("run")
    common = [*TINY, "--timesteps", "50", "--steps-infer", "2", "--seed", "1"]
    assert run(["gen-data", "--out", str(root / "data"), "--clips", "2", *common]) == 0
    assert run(["train-ae", "--data", str(root / "data"), "--out", str(root), "--ae-steps", "3", *common]) == 0
    assert run(["train", "--data", str(root / "data"), "--out", str(root), "--train-steps", "3", *common]) == 0
    return root, common


def test_train_outputs(workspace):
    root, _ = workspace
    assert (root / "model.vfck").read_bytes()[:4] == b"VFCK"
    assert (root / "loss.csv").read_text().splitlines()[0] == "step,loss"
    assert len((root / "loss.csv").read_text().splitlines()) == 4


def test_interpolate_endpoints(workspace, tmp_path):
    root, common = workspace
    clip = decode_clip((root / "data" / "clip_0000.vfic").read_bytes())
    (tmp_path / "a.vfic").write_bytes(encode_clip(clip[:1]))
    (tmp_path / "b.vfic").write_bytes(encode_clip(clip[-1:]))
    code = run(["interpolate", "--first", str(tmp_path / "a.vfic"), "--last", str(tmp_path / "b.vfic"),
                "--n", "9", "--ckpt", str(root / "model.vfck"), "--out", str(tmp_path / "o"), "--ppm", *common])
    assert code == 0
    out = decode_clip((tmp_path / "o" / "interp.vfic").read_bytes())
    assert out.shape == (9, 3, 32, 32)
    assert out[0].tobytes() == clip[0].tobytes() and out[-1].tobytes() == clip[-1].tobytes()
    assert (tmp_path / "o" / "frame_008.ppm").read_bytes().startswith(b"P6\n32 32\n255\n")


def test_eval_and_ablate(workspace):
    root, common = workspace
    assert run(["eval", "--data", str(root / "data"), "--ckpt", str(root / "model.vfck"), "--out", str(root), *common]) == 0
    assert "linear_blend" in (root / "eval.json").read_text()
    code = run(["ablate", "--data", str(root / "data"), "--eval-data", str(root / "data"), "--ae", str(root / "ae.vfck"),
                "--out", str(root), "--train-steps", "1", *common])
    assert code == 0
    text = (root / "ablation.txt").read_text()
    for row in ("baseline", "+cross-frame attention", "+temporal features", "full"):
        assert row in text


def test_gradcheck_exit_codes(monkeypatch):
    ok = GradCheckReport(errors={"x": 1e-9}, checked={"x": 1})
    bad = GradCheckReport(errors={"x": 1e-2}, checked={"x": 1})
    monkeypatch.setattr(gradsuite, "SUITES", {"ok": lambda: ok})
    assert run(["gradcheck"]) == 0
    monkeypatch.setattr(gradsuite, "SUITES", {"ok": lambda: ok, "bad": lambda: bad})
    assert run(["gradcheck"]) == 2
