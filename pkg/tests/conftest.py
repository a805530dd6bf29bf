import torch

from framegen.condencoder import ConditionBundle, condition_mask
from framegen.gradsuite import randomize_zero_params  # noqa: F401


def random_bundle(N: int, h: int, w: int, latent_ch: int = 4, seed: int = 0, dtype=torch.float64) -> ConditionBundle:
    """Bundle with valid mask layout but random latents and temporal stack."""
    g = torch.Generator().manual_seed(seed)
    lat = torch.rand(N, latent_ch, h, w, generator=g, dtype=dtype) * 2 - 1
    spatial = torch.cat([lat, condition_mask(N, h, w, dtype)], dim=1)
    stack = torch.randn(N, 7, 4 * h, 4 * w, generator=g, dtype=dtype) * 0.3
    stack[:, 6] = (torch.arange(N, dtype=dtype) / max(N - 1, 1))[:, None, None]
    return ConditionBundle(spatial, stack)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n])
