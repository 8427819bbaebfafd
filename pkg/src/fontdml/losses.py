"""Training objectives for both backbones.

Notation follows the rest of the package: ``y`` is a generated batch and ``y_true``
the ground truth, both ``(N, 1, H, W)`` in [0, 1] with 0 = ink. Discriminator scores
are probabilities and are clamped to ``[SCORE_EPS, 1 - SCORE_EPS]`` before logs.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .models import read_archive, write_archive

logger = logging.getLogger(__name__)

SCORE_EPS = 1e-7
CX_BANDWIDTH = 0.5
CX_EPS = 1e-5


@dataclass
class LossWeights:
    lambda_l1: float = 100.0
    lambda_adv: float = 1.0
    lambda_cx: float = 1.0
    lambda_local: float = 1.0
    lambda_dml: float = 1.0

    def __post_init__(self):
        for name, value in vars(self).items():
            if value < 0:
                raise ValueError(f"{name} must be nonnegative")


def _reduce(per_sample: torch.Tensor, reduction: str) -> torch.Tensor:
    if reduction == "mean":
        return per_sample.mean()
    if reduction == "none":
        return per_sample
    raise ValueError(f"unknown reduction {reduction!r}")


# --- metric learning ---------------------------------------------------------

def dml_loss(logits: torch.Tensor, target: torch.Tensor | int, reduction: str = "mean") -> torch.Tensor:
    """Softmax cross-entropy of temperature-scaled logits; ``target`` holds 0-based class indices.

    ``logits`` is ``(C,)`` or ``(N, C)``; the max is subtracted before exponentiation.
    """
    single = logits.dim() == 1
    if single:
        logits = logits[None]
    target = torch.as_tensor(target, dtype=torch.long).reshape(-1)
    num_classes = logits.shape[1]
    if target.numel() != logits.shape[0]:
        raise ValueError("one class label per embedding required")
    if bool(((target < 0) | (target >= num_classes)).any()):
        raise ValueError(f"class labels must lie in [0, {num_classes})")
    shifted = logits - logits.max(dim=1, keepdim=True).values.detach()
    log_norm = torch.log(torch.exp(shifted).sum(dim=1))
    per = log_norm - shifted.gather(1, target[:, None]).squeeze(1)
    return per[0] if single and reduction == "none" else _reduce(per, reduction)


# --- pixel losses ------------------------------------------------------------

def l1_loss(y: torch.Tensor, y_true: torch.Tensor, reduction: str = "mean") -> torch.Tensor:
    """Mean absolute pixel difference (per image with ``reduction='none'``)."""
    if y.shape != y_true.shape:
        raise ValueError(f"shape mismatch {tuple(y.shape)} vs {tuple(y_true.shape)}")
    per = (y - y_true).abs().reshape(y.shape[0], -1).mean(dim=1) if y.dim() > 2 else (y - y_true).abs().mean()[None]
    return _reduce(per, reduction)


# --- adversarial -------------------------------------------------------------

def _clamp(scores: torch.Tensor) -> torch.Tensor:
    return scores.clamp(SCORE_EPS, 1.0 - SCORE_EPS)


def adv_g_loss(fake_scores: torch.Tensor, reduction: str = "mean") -> torch.Tensor:
    """``E[log(1 - D(y))]``; the generator minimizes this."""
    return _reduce(torch.log1p(-_clamp(fake_scores)), reduction)


def adv_d_tex_loss(real_scores: torch.Tensor, fake_scores: torch.Tensor) -> torch.Tensor:
    """Texture-discriminator objective ``E[log D(real)] + E[log(1 - D(y))]``, to be maximized."""
    return torch.log(_clamp(real_scores)).mean() + torch.log1p(-_clamp(fake_scores)).mean()


# --- contextual loss ---------------------------------------------------------

class PerceptualExtractor(nn.Module):
    """Frozen feature pyramid used by the contextual loss and by FID.

    The default is a fixed random-weight conv stack (seeded); weights trained elsewhere
    can be loaded with :meth:`load` from the package checkpoint container.
    """

    def __init__(self, widths: Sequence[int] = (8, 16, 16), seed: int = 0, provenance: str = "random-fixed"):
        super().__init__()
        if not widths:
            raise ValueError("extractor needs at least one level")
        gen = torch.Generator().manual_seed(seed)
        blocks, prev = [], 1
        for i, w in enumerate(widths):
            conv = nn.Conv2d(prev, w, 3, 1, 1)
            with torch.no_grad():
                conv.weight.copy_(torch.randn(conv.weight.shape, generator=gen) * math.sqrt(2.0 / (prev * 9)))
                conv.bias.copy_(torch.randn(conv.bias.shape, generator=gen) * 0.1)
            # first level pools 4x so the densest level is 16x16 for a 64px glyph
            blocks.append(nn.Sequential(conv, nn.ReLU(), nn.AvgPool2d(4 if i == 0 else 2)))
            prev = w
        self.blocks = nn.ModuleList(blocks)
        self.widths = tuple(widths)
        self.seed = seed
        self.provenance = provenance
        self.requires_grad_(False)

    @property
    def levels(self) -> int:
        return len(self.blocks)

    @property
    def feature_dim(self) -> int:
        return self.widths[-1]

    def forward(self, images: torch.Tensor) -> list[torch.Tensor]:
        x = images * 2.0 - 1.0
        feats = []
        for block in self.blocks:
            x = block(x)
            feats.append(x)
        return feats

    def pooled(self, images: torch.Tensor) -> torch.Tensor:
        """Global-average-pooled last level, one ``feature_dim`` vector per image."""
        return self(images)[-1].mean(dim=(2, 3))

    def save(self, path) -> None:
        arrays = {k: v.numpy() for k, v in self.state_dict().items()}
        write_archive(path, arrays, {"kind": "perceptual_extractor", "widths": list(self.widths),
                                     "seed": self.seed})

    @classmethod
    def load(cls, path) -> "PerceptualExtractor":
        arrays, manifest = read_archive(path)
        ext = cls(manifest["widths"], seed=manifest.get("seed", 0), provenance="imported-weights")
        ext.load_state_dict({k: torch.from_numpy(v.copy()) for k, v in arrays.items()})
        ext.requires_grad_(False)
        return ext


def contextual_similarity(x: torch.Tensor, y: torch.Tensor, h: float = CX_BANDWIDTH,
                          eps: float = CX_EPS) -> torch.Tensor:
    """CX between feature maps ``x`` (generated) and ``y`` (target), one value per sample.

    Both are ``(N, C, H, W)`` or ``(N, C, P)``; spatial positions are treated as an
    unordered set of feature vectors.
    """
    xs, ys = x.flatten(2), y.flatten(2)
    xs = xs / (torch.linalg.vector_norm(xs, dim=1, keepdim=True) + 1e-12)
    ys = ys / (torch.linalg.vector_norm(ys, dim=1, keepdim=True) + 1e-12)
    dist = 1.0 - torch.einsum("nci,ncj->nij", xs, ys)  # i: generated, j: target
    rel = dist / (dist.min(dim=2, keepdim=True).values + eps)
    w = torch.exp((1.0 - rel) / h)
    cx = w / w.sum(dim=2, keepdim=True)
    return cx.max(dim=1).values.mean(dim=1)


def contextual_loss(y: torch.Tensor, y_true: torch.Tensor, extractor: PerceptualExtractor,
                    h: float = CX_BANDWIDTH, reduction: str = "mean") -> torch.Tensor:
    if y.shape != y_true.shape:
        raise ValueError(f"shape mismatch {tuple(y.shape)} vs {tuple(y_true.shape)}")
    fy, ft = extractor(y), extractor(y_true)
    per = torch.stack([-torch.log(contextual_similarity(a, b, h)) for a, b in zip(fy, ft)]).mean(dim=0)
    return _reduce(per, reduction)


# --- local texture refinement ------------------------------------------------

def gaussian_kernel(size: int = 3, sigma: float = 1.0) -> torch.Tensor:
    ax = torch.arange(size, dtype=torch.float64) - (size - 1) / 2
    g = torch.exp(-(ax ** 2) / (2 * sigma ** 2))
    k = torch.outer(g, g)
    return k / k.sum()


def gaussian_blur(patches: torch.Tensor, size: int = 3, sigma: float = 1.0) -> torch.Tensor:
    """Blur ``(N, 1, H, W)`` patches; replicate padding keeps constant patches unchanged."""
    k = gaussian_kernel(size, sigma).to(patches.dtype)[None, None]
    pad = size // 2
    return F.conv2d(F.pad(patches, (pad, pad, pad, pad), mode="replicate"), k)


def random_patches(images: torch.Tensor, rng: np.random.Generator, size: int = 16, per_image: int = 4) -> torch.Tensor:
    """Cut ``per_image`` random ``size``-pixel square patches from each image."""
    n, _, hgt, wid = images.shape
    if size > min(hgt, wid):
        raise ValueError("patch larger than image")
    ys = rng.integers(0, hgt - size + 1, size=(n, per_image))
    xs = rng.integers(0, wid - size + 1, size=(n, per_image))
    out = [images[i, :, y:y + size, x:x + size] for i in range(n) for y, x in zip(ys[i], xs[i])]
    return torch.stack(out)


def local_losses(fake_scores: torch.Tensor, real_scores: torch.Tensor,
                 blur_scores: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Return ``(generator term, discriminator term)`` from local-critic scores.

    The generator term ``E[log(1 - D(p_y))]`` is minimized; the discriminator term
    ``E[log D(p_real)] + E[log(1 - D(p_blur))] + E[log(1 - D(p_y))]`` is maximized.
    """
    g = torch.log1p(-_clamp(fake_scores)).mean()
    d = (torch.log(_clamp(real_scores)).mean() + torch.log1p(-_clamp(blur_scores)).mean()
         + torch.log1p(-_clamp(fake_scores)).mean())
    return g, d


# --- EMD pixel-weighted L1 ---------------------------------------------------

def ink_mean(images: np.ndarray, mode: str = "all", black_threshold: float = 0.5) -> np.ndarray:
    """Per-image mean ink (1 - pixel), over all pixels or over black pixels only."""
    imgs = np.asarray(images, dtype=np.float64).reshape(len(images), -1)
    ink = 1.0 - imgs
    if mode == "all":
        return ink.mean(axis=1)
    if mode == "black":
        mask = imgs < black_threshold
        counts = mask.sum(axis=1)
        return np.where(counts > 0, (ink * mask).sum(axis=1) / np.maximum(counts, 1), 0.0)
    raise ValueError(f"unknown ink-mean mode {mode!r}")


@dataclass
class PixelWeighting:
    """Per-image ``beta`` over a training set, plus the black-pixel threshold for ``alpha``."""

    keys: list
    beta: np.ndarray
    black_threshold: float = 0.5
    mean_mode: str = "all"
    _index: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self._index = {k: i for i, k in enumerate(self.keys)}

    @classmethod
    def from_images(cls, keys: Sequence, images: np.ndarray, black_threshold: float = 0.5,
                    mean_mode: str = "all") -> "PixelWeighting":
        means = ink_mean(images, mean_mode, black_threshold)
        z = np.exp(means - means.max())
        return cls(list(keys), z / z.sum(), black_threshold, mean_mode)

    def beta_for(self, keys: Sequence) -> np.ndarray:
        return np.array([self.beta[self._index[k]] for k in keys])


def black_pixel_alpha(y_true: torch.Tensor, black_threshold: float = 0.5) -> torch.Tensor:
    """``1 / N_b`` per image, falling back to ``1 / (pixel count)`` for inkless images."""
    flat = y_true.reshape(y_true.shape[0], -1)
    counts = (flat < black_threshold).sum(dim=1).to(y_true.dtype)
    if bool((counts == 0).any()):
        logger.warning("%d target image(s) without black pixels; alpha falls back to 1/pixels",
                       int((counts == 0).sum()))
        counts = torch.where(counts == 0, torch.full_like(counts, flat.shape[1]), counts)
    return 1.0 / counts


def emd_weighted_l1(y: torch.Tensor, y_true: torch.Tensor, beta: torch.Tensor | float,
                    black_threshold: float = 0.5, reduction: str = "mean") -> torch.Tensor:
    """``alpha * beta * sum|y - y_true|`` per image, alpha from the black pixels of ``y_true``."""
    if y.shape != y_true.shape:
        raise ValueError(f"shape mismatch {tuple(y.shape)} vs {tuple(y_true.shape)}")
    alpha = black_pixel_alpha(y_true, black_threshold)
    beta = torch.as_tensor(beta, dtype=y.dtype).reshape(-1)
    per = alpha * beta * (y - y_true).abs().reshape(y.shape[0], -1).sum(dim=1)
    return _reduce(per, reduction)


# --- combined objectives -----------------------------------------------------

AGIS_TERMS = ("l1", "adv", "cx", "local", "dml")


def total_g_loss_agis(components: Mapping[str, torch.Tensor], weights: LossWeights,
                      has_ground_truth: torch.Tensor | None = None, mode: str = "pretrain") -> torch.Tensor:
    """Weighted generator objective.

    ``components`` maps each of :data:`AGIS_TERMS` to a per-sample tensor (or scalar).
    In ``finetune`` mode the pair-wise terms (l1, cx) are kept only where
    ``has_ground_truth`` is set and the metric-learning term is dropped.
    """
    if mode not in ("pretrain", "finetune"):
        raise ValueError(f"unknown mode {mode!r}")
    like = next(iter(components.values()))
    zero = torch.zeros_like(torch.as_tensor(like))

    def term(name):
        return torch.as_tensor(components.get(name, zero))

    l1, cx = term("l1"), term("cx")
    if mode == "finetune" and has_ground_truth is not None:
        mask = has_ground_truth.to(l1.dtype)
        l1, cx = l1 * mask, cx * mask
    total = (weights.lambda_l1 * l1 + weights.lambda_cx * cx + weights.lambda_adv * term("adv")
             + weights.lambda_local * term("local"))
    if mode == "pretrain":
        total = total + weights.lambda_dml * term("dml")
    return total.mean()


def total_g_loss_emd(weighted_l1: torch.Tensor | float, dml: torch.Tensor | float,
                     lambda_dml: float = 1.0) -> torch.Tensor | float:
    return weighted_l1 + lambda_dml * dml
