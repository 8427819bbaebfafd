"""
Image-quality report
====================

L1, PSNR, SSIM and a Frechet distance per font, then the plain mean over fonts.
The Frechet distance runs on features from a fixed random conv stack, so its
numbers are only comparable within this package.
"""

from pathlib import Path

import numpy as np

from fontdml.data import synthesize_corpus
from fontdml.losses import PerceptualExtractor
from fontdml.metrics import evaluate_font_set, fid, psnr, ssim, torch_feature_fn

a = np.full((32, 32), 0.4)
print("PSNR of a 0.1 offset:", psnr(a, a + 0.1))
board = (np.indices((32, 32)).sum(axis=0) % 2).astype(float)
print("SSIM self", ssim(board, board), "vs inverse", round(ssim(board, 1 - board), 4))

rng = np.random.default_rng(0)
print("1-D Frechet distance, expected 1 + 1 + 4 - 4 = 2:",
      round(fid(rng.normal(0, 1, 10_000), rng.normal(1, 2, 10_000)), 3))

# Compare two renderings of the same held-out fonts: the corpus itself and a
# noisy copy standing in for generated glyphs.
corpus = synthesize_corpus(26, 30, seed=0)
truth = {f: {c: corpus.image(f, c) for c in corpus.chars} for f in corpus.eval_fonts}
noisy = {f: {c: np.clip(img + rng.normal(0, 0.05, img.shape), 0, 1) for c, img in d.items()}
         for f, d in truth.items()}
report = evaluate_font_set(noisy, truth, torch_feature_fn(PerceptualExtractor()), metadata={"n": 5, "seed": 0})
for font, vals in report.per_font.items():
    print(font, {k: round(v, 4) for k, v in vals.items()})
print("mean", {k: round(v, 4) for k, v in report.aggregate.items()})
print("wrote", report.write(Path("runs/demos/05")))
