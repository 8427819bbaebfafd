"""
Loss terms on toy inputs
========================

Each objective evaluated on inputs small enough to check by hand.
"""

import math

import torch

from fontdml.losses import (PerceptualExtractor, black_pixel_alpha, contextual_loss, dml_loss, emd_weighted_l1,
                            gaussian_blur, l1_loss)
from fontdml.models import dml_logits, normalize_embedding

# Metric-learning term: softmax over temperature-scaled class scores of a
# unit-length embedding. One embedding aligned with class 0 and anti-aligned
# with class 1.
x = torch.tensor([1.0, 0.0], dtype=torch.float64)
w = torch.tensor([[1.0, -1.0], [0.0, 0.0]], dtype=torch.float64)
b = torch.zeros(2, dtype=torch.float64)
for tau in (1.0, 0.5, 0.1):
    val = float(dml_loss(dml_logits(x, w, b, tau), 0))
    print(f"tau={tau}: loss {val:.5f}  (log(1+exp(-2/tau)) = {math.log1p(math.exp(-2 / tau)):.5f})")

# Lower temperature sharpens the softmax: same geometry, smaller loss once correct.
# Embeddings are L2-normalized before the head sees them.
print("normalized [3, 4] ->", normalize_embedding(torch.tensor([3.0, 4.0])).tolist())

# Pixel L1.
y = torch.tensor([[[[0.0, 0.5], [1.0, 0.25]]]])
t = torch.tensor([[[[0.5, 0.5], [0.0, 0.25]]]])
print("L1", float(l1_loss(y, t)))

# Contextual loss compares feature distributions, not aligned pixels: a shifted
# glyph is closer under CX than under L1 relative to an unrelated image.
torch.manual_seed(0)
ext = PerceptualExtractor()
img = torch.ones(1, 1, 64, 64)
img[..., 20:44, 28:36] = 0.0
shifted = torch.roll(img, 6, dims=-1)
noise = torch.rand(1, 1, 64, 64)
# Flat background repeats one feature vector many times, which keeps the
# self-comparison a little above zero.
print("CX self", float(contextual_loss(img, img, ext)))
print("CX shifted", float(contextual_loss(shifted, img, ext)), "L1 shifted", float(l1_loss(shifted, img)))
print("CX noise", float(contextual_loss(noise, img, ext)))

# Blurred real patches act as extra fakes for the local critic.
patch = torch.zeros(1, 1, 5, 5)
patch[0, 0, 2, 2] = 1.0
print("blurred impulse\n", gaussian_blur(patch)[0, 0, 1:4, 1:4].numpy().round(4))

# Pixel-weighted L1: scaled by 1 / (number of ink pixels) and a per-glyph weight.
target = torch.tensor([[[[0.0, 0.0], [1.0, 1.0]]]])
pred = torch.tensor([[[[0.3, 0.1], [0.8, 0.8]]]])
print("alpha", float(black_pixel_alpha(target)), "weighted L1", float(emd_weighted_l1(pred, target, 0.5)))
