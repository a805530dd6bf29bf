"""
Conditioning and Zero Initialization
====================================

Builds the condition bundle for a clip (keyframe latents with zero slots, a
binary mask and the temporal stack) and shows that a freshly built model
ignores it exactly: every injection path starts at zero.
"""
import numpy as np
import torch

from framegen.data import SceneConfig, gen_clip
from framegen.fusion import FusionParams, fuse, spatial_path
from framegen.latent import Autoencoder
from framegen.pipeline import TrainConfig, VFIModel, condition_for_clip

torch.manual_seed(0)
print("framegen: conditioning and zero init")
print("=" * 40)

###############################################################################
# The condition bundle
# --------------------
# Only the first and last frames enter.  Middle slots hold the encoding of a
# zero image, and the mask channel marks the keyframes.

ae = Autoencoder().eval()
clip = gen_clip(SceneConfig(), 9, 64, 64, seed=1)
bundle = condition_for_clip(ae, clip)
print(f"spatial latents {tuple(bundle.spatial_latents.shape)}, temporal stack {tuple(bundle.temporal_stack.shape)}")
print("mask per frame:", bundle.mask[:, 0, 0, 0].tolist())

# scrambling the middle frames changes nothing
clip.frames[1:-1] = np.random.default_rng(0).random(clip.frames[1:-1].shape).astype(np.float32)
again = condition_for_clip(ae, clip)
print("bundle unchanged after scrambling middle frames:",
      torch.equal(bundle.spatial_latents, again.spatial_latents) and torch.equal(bundle.temporal_stack, again.temporal_stack))

###############################################################################
# Zero-initialized injection
# --------------------------

model = VFIModel(TrainConfig(), ae).double()
z = torch.randn(9, 4, 16, 16, dtype=torch.float64)
with torch.no_grad():
    same = torch.equal(model(z, 500, bundle.to(torch.float64)), model(z, 500))
print(f"conditioned == unconditioned output at init (bitwise): {same}")
print(f"trainable parameters: {model.active_parameter_count():,}")

###############################################################################
# Fusion at init reduces to the spatial path
# ------------------------------------------

p = FusionParams(32, 32).double()
F_s, F_t = torch.randn(2, 32, 8, 8, dtype=torch.float64), torch.randn(2, 32, 8, 8, dtype=torch.float64)
print("fuse(F_s, F_t) == CBAM(F_s):", torch.equal(fuse(F_s, F_t, p), spatial_path(F_s, p)))
