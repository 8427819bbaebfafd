"""Image-quality metrics and per-font reports (L1, PSNR, SSIM, FID on pluggable features)."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping

import logging

import numpy as np
from scipy.ndimage import correlate1d

logger = logging.getLogger(__name__)

PSNR_CAP = 100.0
FID_EPS = 1e-6
METRIC_NAMES = ("l1", "psnr", "ssim", "fid")
FID_LABEL = "FID (pluggable features)"


def l1(y, y_true) -> float:
    """Mean absolute pixel difference, evaluated by :func:`fontdml.losses.l1_loss` in float64."""
    import torch

    from .losses import l1_loss

    y, y_true = np.asarray(y, dtype=np.float64), np.asarray(y_true, dtype=np.float64)
    if y.shape != y_true.shape:
        raise ValueError(f"shape mismatch {y.shape} vs {y_true.shape}")
    return float(l1_loss(torch.from_numpy(y)[None], torch.from_numpy(y_true)[None]))


def psnr(y, y_true, data_range: float = 1.0) -> float:
    y, y_true = np.asarray(y, dtype=np.float64), np.asarray(y_true, dtype=np.float64)
    mse = float(np.mean((y - y_true) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(data_range ** 2 / mse))


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    ax = np.arange(size) - (size - 1) / 2
    g = np.exp(-(ax ** 2) / (2 * sigma ** 2))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    half = len(g) // 2
    out = correlate1d(correlate1d(img, g, axis=0, mode="reflect"), g, axis=1, mode="reflect")
    return out[half:-half, half:-half]


def ssim(y, y_true, data_range: float = 1.0, win_size: int = 11, sigma: float = 1.5,
         k1: float = 0.01, k2: float = 0.03) -> float:
    """Mean SSIM over all fully-contained Gaussian windows (no border padding)."""
    a, b = np.asarray(y, dtype=np.float64), np.asarray(y_true, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2:
        raise ValueError("ssim expects two equal-shape 2-D images")
    if min(a.shape) < win_size:
        raise ValueError(f"images smaller than the {win_size}px window")
    g = _gaussian_window(win_size, sigma)
    c1, c2 = (k1 * data_range) ** 2, (k2 * data_range) ** 2
    mu_a, mu_b = _filter_valid(a, g), _filter_valid(b, g)
    var_a = _filter_valid(a * a, g) - mu_a ** 2
    var_b = _filter_valid(b * b, g) - mu_b ** 2
    cov = _filter_valid(a * b, g) - mu_a * mu_b
    s = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / ((mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2))
    return float(s.mean())


def _sqrt_psd(mat: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh((mat + mat.T) / 2)
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def fid(features_a, features_b, eps: float = FID_EPS) -> float:
    """Frechet distance between Gaussians fitted to two feature sets (rows = samples).

    ``Tr(sqrt(S_a S_b))`` is computed as the sum of square roots of the eigenvalues of
    the symmetric matrix ``S_a^{1/2} S_b S_a^{1/2}``; negative eigenvalues from round-off
    are clamped to zero.
    """
    a = np.asarray(features_a, dtype=np.float64)
    b = np.asarray(features_b, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if b.ndim == 1:
        b = b[:, None]
    if a.shape[1] != b.shape[1]:
        raise ValueError("feature dimensions differ")
    k = a.shape[1]
    if len(a) < k + 1 or len(b) < k + 1:
        raise ValueError(f"need at least {k + 1} samples per side for {k}-dim features")
    mu_a, mu_b = a.mean(axis=0), b.mean(axis=0)
    cov_a = np.cov(a, rowvar=False).reshape(k, k) + eps * np.eye(k)
    cov_b = np.cov(b, rowvar=False).reshape(k, k) + eps * np.eye(k)
    root_a = _sqrt_psd(cov_a)
    inner = root_a @ cov_b @ root_a
    tr_sqrt = np.sqrt(np.clip(np.linalg.eigvalsh((inner + inner.T) / 2), 0.0, None)).sum()
    value = float(((mu_a - mu_b) ** 2).sum() + np.trace(cov_a) + np.trace(cov_b) - 2.0 * tr_sqrt)
    return max(value, 0.0)


@dataclass
class MetricReport:
    per_font: dict[str, dict[str, float]]
    metadata: dict = field(default_factory=dict)

    @property
    def aggregate(self) -> dict[str, float]:
        if not self.per_font:
            return {}
        names = list(next(iter(self.per_font.values())))
        return {m: float(np.mean([v[m] for v in self.per_font.values()])) for m in names}

    def to_dict(self) -> dict:
        def clean(d):
            return {k: (None if isinstance(v, float) and np.isnan(v) else v) for k, v in d.items()}

        return {"metadata": self.metadata, "per_font": {f: clean(v) for f, v in self.per_font.items()},
                "aggregate": clean(self.aggregate)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["font_id", *METRIC_NAMES])
        for font, vals in self.per_font.items():
            writer.writerow([font, *(repr(float(vals[m])) for m in METRIC_NAMES)])
        return buf.getvalue()

    def write(self, directory: str | Path, stem: str = "image_metrics") -> tuple[Path, Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        jp, cp = directory / f"{stem}.json", directory / f"{stem}.csv"
        jp.write_text(self.to_json())
        cp.write_text(self.to_csv())
        return jp, cp

    @classmethod
    def from_dict(cls, d: dict) -> "MetricReport":
        return cls(per_font=d["per_font"], metadata=d.get("metadata", {}))


def evaluate_font_set(generated: Mapping[str, Mapping[str, np.ndarray]],
                      ground_truth: Mapping[str, Mapping[str, np.ndarray]],
                      extractor: Callable[[np.ndarray], np.ndarray] | None = None,
                      metadata: dict | None = None) -> MetricReport:
    """Per-font metrics averaged over each font's characters, then the unweighted font mean.

    ``generated``/``ground_truth`` map font id -> char id -> image. ``extractor`` maps
    a ``(N, H, W)`` stack to ``(N, k)`` features for FID; when omitted FID is NaN.
    """
    per_font = {}
    for font in sorted(generated):
        chars = sorted(generated[font])
        if font not in ground_truth or any(c not in ground_truth[font] for c in chars):
            raise KeyError(f"ground truth missing for font {font}")
        gen = np.stack([np.asarray(generated[font][c], dtype=np.float64) for c in chars])
        ref = np.stack([np.asarray(ground_truth[font][c], dtype=np.float64) for c in chars])
        fid_value = float("nan")
        if extractor is not None:
            fa, fb = extractor(gen), extractor(ref)
            if len(fa) > fa.shape[1]:
                fid_value = fid(fa, fb)
            else:
                logger.warning("font %s: %d glyphs is too few for %d-dim FID features; reporting null",
                               font, len(fa), fa.shape[1])
        per_font[font] = {
            "l1": float(np.mean([l1(g, r) for g, r in zip(gen, ref)])),
            "psnr": float(np.mean([psnr(g, r) for g, r in zip(gen, ref)])),
            "ssim": float(np.mean([ssim(g, r) for g, r in zip(gen, ref)])),
            "fid": fid_value,
        }
    meta = {"fid_label": FID_LABEL}
    meta.update(metadata or {})
    return MetricReport(per_font, meta)


def torch_feature_fn(extractor) -> Callable[[np.ndarray], np.ndarray]:
    """Wrap a :class:`~fontdml.losses.PerceptualExtractor` as a numpy feature function."""
    import torch

    def features(stack: np.ndarray) -> np.ndarray:
        with torch.no_grad():
            x = torch.as_tensor(np.asarray(stack, dtype=np.float32))[:, None]
            return extractor.pooled(x).double().numpy()

    return features
