import math

import numpy as np
import pytest
import torch

from framegen import diffusion as D
from framegen.nncore import ShapeError, grad_check


@pytest.fixture(scope="module")
def sched():
    return D.make_schedule(1000)


def test_schedule_rejects_small_T():
    with pytest.raises(ValueError):
        D.make_schedule(1)


def test_schedule_endpoint_before_clamp():
    assert D.cosine_alpha(0, 1000) == 1.0
    s = D.make_schedule(10)
    assert s.alpha[0] == 1.0
    assert s.sigma[0] == D.CLAMP_FLOOR  # sqrt(1 - 1) = 0 before the floor


def test_schedule_invariants(sched):
    a, s = sched.alpha, sched.sigma
    assert np.all(np.abs(a**2 + s**2 - 1) <= 1e-6)
    assert np.all(np.diff(a) <= 0)
    assert np.all(np.diff(s) >= 0)
    assert a[0] >= 1 - 1e-6
    assert a.min() >= D.CLAMP_FLOOR and s.min() >= D.CLAMP_FLOOR


def test_schedule_matches_scalar_formula(sched):
    s = 0.008
    expected = math.cos(math.pi / 2 * (0.5 + s) / (1 + s)) / math.cos(math.pi / 2 * s / (1 + s))
    assert sched.alpha[500] == pytest.approx(expected, abs=1e-12)
    assert sched.sigma[500] == pytest.approx(math.sqrt(1 - expected**2), abs=1e-12)


def test_add_noise_endpoints(sched):
    z = torch.randn(2, 3, dtype=torch.float64)
    eps = torch.randn(2, 3, dtype=torch.float64)
    # at t=0 sigma sits on the 1e-4 floor
    assert torch.allclose(D.add_noise(z, eps, 0, sched), z, atol=1e-3)
    assert torch.equal(D.add_noise(z, eps, 0, sched), z + 1e-4 * eps)
    zero = torch.zeros_like(z)
    assert torch.equal(D.add_noise(zero, eps, 300, sched), sched.sigma[300] * eps)


def test_add_noise_scalar_oracle(sched):
    g = torch.Generator().manual_seed(3)
    z = torch.randn(4, 5, generator=g, dtype=torch.float64)
    eps = torch.randn(4, 5, generator=g, dtype=torch.float64)
    out = D.add_noise(z, eps, 417, sched)
    a, s = sched.alpha[417], sched.sigma[417]
    for i in range(4):
        for j in range(5):
            assert out[i, j].item() == pytest.approx(a * z[i, j].item() + s * eps[i, j].item(), abs=1e-6)


def test_add_noise_per_item_timesteps(sched):
    z = torch.randn(3, 2, 2, dtype=torch.float64)
    eps = torch.randn(3, 2, 2, dtype=torch.float64)
    ts = torch.tensor([1, 500, 999])
    out = D.add_noise(z, eps, ts, sched)
    for i, t in enumerate(ts.tolist()):
        assert torch.allclose(out[i], D.add_noise(z[i], eps[i], t, sched))


def test_shape_mismatch_rejected(sched):
    with pytest.raises(ShapeError):
        D.add_noise(torch.zeros(2), torch.zeros(3), 1, sched)
    with pytest.raises(ShapeError):
        D.v_target(torch.zeros(2), torch.zeros(3), 1, sched)
    with pytest.raises(ShapeError):
        D.loss(torch.zeros(2), torch.zeros(3))


def test_timestep_out_of_range(sched):
    with pytest.raises(ValueError):
        D.add_noise(torch.zeros(2), torch.zeros(2), 1001, sched)


def test_v_target_paper_convention(sched):
    z = torch.randn(6, dtype=torch.float64)
    eps = torch.randn(6, dtype=torch.float64)
    assert torch.allclose(D.v_target(z, eps, 0, sched), z, atol=1e-3)
    t = 250
    a, s = sched.alpha[t], sched.sigma[t]
    assert torch.allclose(D.v_target(z, z, t, sched), (a - s) * z)
    assert torch.allclose(D.v_target(z, eps, t, sched), a * z - s * eps)


def test_v_inversion_identity(sched):
    g = torch.Generator().manual_seed(0)
    for t in [1, 100, 500, 900, 990]:
        z = torch.randn(8, generator=g, dtype=torch.float64)
        eps = torch.randn(8, generator=g, dtype=torch.float64)
        z_t = D.add_noise(z, eps, t, sched)
        v = D.v_target(z, eps, t, sched)
        assert torch.allclose((z_t + v) / (2 * sched.alpha[t]), z, atol=1e-9)


def test_recover_exact_pair(sched):
    z = torch.randn(3, 4, dtype=torch.float64)
    eps = torch.randn(3, 4, dtype=torch.float64)
    z_t = D.add_noise(z, eps, 640, sched)
    z_hat, eps_hat = D.recover(z_t, D.v_target(z, eps, 640, sched), 640, sched)
    assert torch.allclose(z_hat, z, atol=1e-5)
    assert torch.allclose(eps_hat, eps, atol=1e-5)


def test_recover_v_equals_zt(sched):
    z_t = torch.randn(5, dtype=torch.float64)
    z_hat, eps_hat = D.recover(z_t, z_t, 321, sched)
    assert torch.allclose(z_hat, z_t / sched.alpha[321])
    assert torch.equal(eps_hat, torch.zeros(5, dtype=torch.float64))


def test_recover_round_trip(sched):
    g = torch.Generator().manual_seed(11)
    z_t = torch.randn(10, generator=g, dtype=torch.float64)
    v = torch.randn(10, generator=g, dtype=torch.float64)
    z_hat, eps_hat = D.recover(z_t, v, 77, sched)
    assert torch.allclose(D.add_noise(z_hat, eps_hat, 77, sched), z_t, atol=1e-5)
    assert torch.allclose(D.v_target(z_hat, eps_hat, 77, sched), v, atol=1e-5)


def test_loss_values():
    v = torch.randn(4, 4, dtype=torch.float64)
    assert D.loss(v, v).item() == 0.0
    assert D.loss(v + 1, v).item() == pytest.approx(1.0, abs=1e-12)
    g = torch.Generator().manual_seed(5)
    a = torch.randn(3, 7, generator=g, dtype=torch.float64)
    b = torch.randn(3, 7, generator=g, dtype=torch.float64)
    acc = 0.0
    for i in range(3):
        for j in range(7):
            acc += (a[i, j].item() - b[i, j].item()) ** 2
    assert D.loss(a, b).item() == pytest.approx(acc / 21, abs=1e-6)


def test_loss_gradient_finite_differences():
    v = torch.randn(2, 3, 4, dtype=torch.float64)
    report = grad_check(lambda p: D.loss(p, v), torch.randn(2, 3, 4, dtype=torch.float64))
    assert report.passed(1e-4), str(report)


def test_variance_preservation(sched):
    g = torch.Generator().manual_seed(0)
    z = torch.randn(8192, generator=g, dtype=torch.float64)
    eps = torch.randn(8192, generator=g, dtype=torch.float64)
    for t in [0, 250, 500, 750, 1000]:
        var = D.add_noise(z, eps, t, sched).var().item()
        assert abs(var - 1) < 0.05


def test_timestep_sampling_excludes_endpoints():
    ts = D.sample_timesteps(20000, 10, torch.Generator().manual_seed(0))
    assert ts.min().item() == 1 and ts.max().item() == 9


def test_timestep_sequence():
    assert D.timestep_sequence(1000, 1) == [1000, 0]
    seq = D.timestep_sequence(1000, 4)
    assert seq == [1000, 750, 500, 250, 0]


def _oracle_model(z, sched):
    def model(z_t, t):
        a, s = sched.alpha[t], sched.sigma[t]
        eps = (z_t - a * z) / s
        return a * z - s * eps

    return model


def test_sample_one_step_oracle_recovers_clean(sched):
    z = torch.rand(2, 4, 3, 3, dtype=torch.float64) * 2 - 1
    out = D.sample(_oracle_model(z, sched), z.shape, sched, steps=1, seed=0, dtype=torch.float64)
    assert torch.allclose(out, z, atol=1e-4)


def test_sample_step_counts_agree_with_oracle(sched):
    z = torch.rand(3, 2, 2, dtype=torch.float64) - 0.5
    m = _oracle_model(z, sched)
    a = D.sample(m, z.shape, sched, steps=5, seed=1, dtype=torch.float64)
    b = D.sample(m, z.shape, sched, steps=10, seed=1, dtype=torch.float64)
    assert torch.allclose(a, z, atol=1e-4) and torch.allclose(a, b, atol=1e-4)


def test_sample_deterministic(sched):
    def model(z_t, t):
        return 0.3 * z_t + 0.01 * t / 1000

    a = D.sample(model, (2, 3), sched, steps=7, seed=42)
    b = D.sample(model, (2, 3), sched, steps=7, seed=42)
    assert torch.equal(a, b)


def test_sample_clip_bounds_estimate(sched):
    out = D.sample(lambda z_t, t: 5 * torch.ones_like(z_t), (4,), sched, steps=3, seed=0, clip=1.0)
    assert out.abs().max() <= 1.0


def test_sample_non_finite_aborts_with_step(sched):
    def model(z_t, t):
        return torch.full_like(z_t, float("nan")) if t < 800 else z_t

    with pytest.raises(FloatingPointError, match="step 1"):
        D.sample(model, (3,), sched, steps=4, seed=0)


def test_sample_rejects_zero_steps(sched):
    with pytest.raises(ValueError):
        D.sample(lambda z, t: z, (2,), sched, steps=0, seed=0)
