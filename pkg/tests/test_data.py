import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from framegen import data as D
from framegen.motion import block_flows, estimate_flow


def test_linear_object_moves_quarter_width():
    cfg = D.SceneConfig(n_objects=1, velocity_range=(0.25, 0.25))
    clip = D.gen_clip(cfg, 9, 64, 64, seed=4)
    pos = clip.meta["positions"]  # [N, objects, (x, y)]
    d = pos[-1, 0] - pos[0, 0]
    assert d[0] ** 2 + d[1] ** 2 <= 16**2
    assert max(abs(d[0]), abs(d[1])) >= 11  # |d| = 16 up to integer rounding of the direction
    # horizontal-only case: exactly W/4
    rng_seed = next(s for s in range(200)
                    if abs(D.gen_clip(cfg, 9, 64, 64, s).meta["positions"][-1, 0, 0]
                           - D.gen_clip(cfg, 9, 64, 64, s).meta["positions"][0, 0, 0]) == 16)
    c2 = D.gen_clip(cfg, 9, 64, 64, rng_seed)
    p = c2.meta["positions"][:, 0]
    assert abs(p[-1, 0] - p[0, 0]) == 64 // 4 and p[-1, 1] == p[0, 1]
    # linear: 2 px per frame
    assert np.all(np.abs(np.diff(p[:, 0])) == 2)


def test_quadratic_trajectory_accelerates():
    cfg = D.SceneConfig(n_objects=1, trajectory="quadratic")
    clip = D.gen_clip(cfg, 9, 64, 64, seed=2)
    p = clip.meta["positions"][:, 0].astype(float)
    step = np.abs(np.diff(p, axis=0)).sum(1)
    assert step[-1] > step[0]


def test_generator_is_deterministic():
    a = D.gen_clip(D.SceneConfig(), 9, 64, 64, seed=7)
    b = D.gen_clip(D.SceneConfig(), 9, 64, 64, seed=7)
    assert a.frames.tobytes() == b.frames.tobytes()
    assert np.array_equal(a.meta["layers"], b.meta["layers"])
    c = D.gen_clip(D.SceneConfig(), 9, 64, 64, seed=8)
    assert a.frames.tobytes() != c.frames.tobytes()


def test_generator_range_and_shape():
    clip = D.gen_clip(D.SceneConfig(n_objects=3), 5, 32, 48, seed=1)
    assert clip.frames.shape == (5, 3, 32, 48)
    assert clip.frames.dtype == np.float32
    assert clip.frames.min() >= 0 and clip.frames.max() <= 1
    assert set(np.unique(clip.meta["layers"])) <= {0, 1, 2, 3}


def test_generator_rejects_bad_dims():
    with pytest.raises(ValueError):
        D.gen_clip(D.SceneConfig(), 9, 62, 64, 0)
    with pytest.raises(ValueError):
        D.SceneConfig(max_displacement=0.6)
    with pytest.raises(ValueError):
        D.SceneConfig(velocity_range=(0.1, 0.3))


def test_analytic_flow_agrees_with_block_matching():
    errs = []
    for seed in range(6):
        clip = D.gen_clip(D.SceneConfig(), 9, 64, 64, seed)
        est = block_flows(estimate_flow(clip.first, clip.last))
        ref = block_flows(clip.meta["flow_forward"])
        errs.append(np.median(np.abs(est - ref)))
    assert max(errs) <= 1.0


# --- container -----------------------------------------------------------


def test_vfic_round_trip(tmp_path):
    clip = D.gen_clip(D.SceneConfig(), 9, 64, 64, seed=3)
    path = tmp_path / "c.vfic"
    D.write_clip(clip, path)
    back = D.read_clip(path)
    assert back.frames.tobytes() == clip.frames.tobytes()


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 4), st.integers(1, 4), st.integers(1, 5), st.integers(1, 5), st.integers(0, 2**31))
def test_vfic_round_trip_any_shape(n, c, h, w, seed):
    arr = np.random.default_rng(seed).standard_normal((n, c, h, w)).astype(np.float32)
    assert D.decode_clip(D.encode_clip(arr)).tobytes() == arr.tobytes()


def test_vfic_header_and_payload_size():
    frames = np.zeros((9, 3, 64, 64), dtype=np.float32)
    buf = D.encode_clip(frames)
    assert buf[:4] == b"VFIC"
    assert struct.unpack("<IIIIIB", buf[4:25]) == (1, 9, 64, 64, 3, 0)
    assert len(buf) - 25 == 9 * 3 * 64 * 64 * 4


def test_vfic_golden_bytes():
    frames = np.array([1.0, -2.0], dtype=np.float32).reshape(1, 1, 1, 2)
    expected = (
        b"VFIC" + b"\x01\x00\x00\x00" + b"\x01\x00\x00\x00" + b"\x01\x00\x00\x00"
        + b"\x02\x00\x00\x00" + b"\x01\x00\x00\x00" + b"\x00"
        + b"\x00\x00\x80\x3f" + b"\x00\x00\x00\xc0"
    )
    assert D.encode_clip(frames) == expected


def test_vfic_errors(tmp_path):
    buf = bytearray(D.encode_clip(np.ones((2, 3, 4, 4), dtype=np.float32)))
    bad = bytearray(buf)
    bad[2] ^= 0xFF
    with pytest.raises(D.BadMagicError):
        D.decode_clip(bytes(bad))
    with pytest.raises(D.TruncatedPayloadError):
        D.decode_clip(bytes(buf[:-3]))
    v2 = bytearray(buf)
    v2[4] = 2
    with pytest.raises(D.UnknownVersionError):
        D.decode_clip(bytes(v2))
    p = tmp_path / "x.vfic"
    p.write_bytes(bytes(bad))
    with pytest.raises(D.ClipFormatError, match="bad magic"):
        D.read_clip(p)


# --- PPM -----------------------------------------------------------------


def test_ppm_rounding_and_header(tmp_path):
    frame = np.zeros((3, 1, 3), dtype=np.float32)
    frame[:, 0, 0] = 1.0
    frame[:, 0, 1] = 0.5
    frame[:, 0, 2] = 0.0
    path = tmp_path / "f.ppm"
    D.export_ppm(frame, path)
    raw = path.read_bytes()
    assert raw.startswith(b"P6\n3 1\n255\n")
    assert raw[len(b"P6\n3 1\n255\n"):] == bytes([255] * 3 + [128] * 3 + [0] * 3)


def test_ppm_two_by_two_payload(tmp_path):
    # dyadic values so v*255 is exact in binary floating point
    frame = np.array(
        [
            [[0.0, 0.25], [0.5, 1.0]],
            [[0.125, 0.375], [0.625, 0.875]],
            [[0.0625, 0.75], [0.9375, 0.5]],
        ]
    )
    path = tmp_path / "g.ppm"
    D.export_ppm(frame, path)
    # floor(v*255 + 0.5), pixels in row-major order, RGB interleaved
    # (0,0): 0, 31.875->32, 15.9375->16      (0,1): 63.75->64, 95.625->96, 191.25->191
    # (1,0): 127.5->128, 159.375->159, 239.0625->239   (1,1): 255, 223.125->223, 127.5->128
    expected = bytes([0, 32, 16, 64, 96, 191, 128, 159, 239, 255, 223, 128])
    raw = path.read_bytes()
    assert raw[: len(b"P6\n2 2\n255\n")] == b"P6\n2 2\n255\n"
    assert raw[len(b"P6\n2 2\n255\n"):] == expected


def test_ppm_rejects_out_of_range(tmp_path):
    with pytest.raises(ValueError):
        D.export_ppm(np.full((3, 2, 2), 1.5), tmp_path / "bad.ppm")


# --- metrics -------------------------------------------------------------


def test_psnr_cases():
    a = np.random.default_rng(0).random((3, 8, 8))
    assert D.psnr(a, a) == 99.0
    assert D.psnr(np.zeros((3, 4, 4)), np.ones((3, 4, 4))) == pytest.approx(0.0, abs=1e-12)
    assert D.psnr(np.zeros((4, 4)), np.full((4, 4), 0.5)) == pytest.approx(6.0206, abs=1e-4)
    b = np.random.default_rng(1).random((3, 8, 8))
    assert D.psnr(a, b) == D.psnr(b, a)
    with pytest.raises(ValueError):
        D.psnr(np.zeros(3), np.zeros(4))


def test_ssim_identical_is_one():
    a = np.random.default_rng(0).random((3, 16, 16))
    assert D.ssim(a, a) == pytest.approx(1.0, abs=1e-12)


def test_ssim_constant_patches_closed_form():
    c1 = (0.01 * 1.0) ** 2
    # mu_a = 0, mu_b = 1, all variances 0: (C1)(C2) / ((1 + C1)(C2))
    expected = c1 / (1 + c1)
    assert D.ssim(np.zeros((16, 16)), np.ones((16, 16))) == pytest.approx(expected, rel=1e-9)


def _ssim_loop(x, y, win=11, sigma=1.5):
    ax = np.arange(win) - (win - 1) / 2
    g = np.exp(-(ax**2) / (2 * sigma**2))
    w = np.outer(g, g)
    w /= w.sum()
    c1, c2 = 0.01**2, 0.03**2
    vals = []
    for i in range(x.shape[0] - win + 1):
        for j in range(x.shape[1] - win + 1):
            px = x[i : i + win, j : j + win]
            py = y[i : i + win, j : j + win]
            mx = (w * px).sum()
            my = (w * py).sum()
            vx = (w * (px - mx) ** 2).sum()
            vy = (w * (py - my) ** 2).sum()
            cxy = (w * (px - mx) * (py - my)).sum()
            vals.append(((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx**2 + my**2 + c1) * (vx + vy + c2)))
    return float(np.mean(vals))


def test_ssim_matches_loop_oracle():
    rng = np.random.default_rng(3)
    for _ in range(3):
        a = rng.random((3, 20, 17))
        b = np.clip(a + 0.2 * rng.standard_normal(a.shape), 0, 1)
        expected = _ssim_loop(D.to_gray(a), D.to_gray(b))
        assert D.ssim(a, b) == pytest.approx(expected, abs=1e-6)
        assert D.ssim(a, b) == pytest.approx(D.ssim(b, a), abs=1e-12)


def test_ssim_rejects_small_images():
    with pytest.raises(ValueError):
        D.ssim(np.zeros((10, 10)), np.zeros((10, 10)))
