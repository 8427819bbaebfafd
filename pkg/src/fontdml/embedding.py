"""Style-embedding separation analysis: Recall@k, k-means++ with NMI, and 2-D projections."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

MAX_LLOYD_ITERS = 300


@dataclass
class LabeledEmbeddings:
    vectors: np.ndarray
    labels: np.ndarray
    font_ids: list[str] = field(default_factory=list)
    char_ids: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.vectors = np.atleast_2d(np.asarray(self.vectors, dtype=np.float64))
        self.labels = np.asarray(self.labels)
        if len(self.vectors) < 2:
            raise ValueError("need at least two embeddings")
        if len(self.labels) != len(self.vectors):
            raise ValueError("one label per embedding required")

    @property
    def n(self) -> int:
        return len(self.vectors)

    @property
    def num_classes(self) -> int:
        return len(np.unique(self.labels))


def _sq_dists(x: np.ndarray) -> np.ndarray:
    sq = (x * x).sum(axis=1)
    d = sq[:, None] + sq[None, :] - 2.0 * x @ x.T
    return np.maximum(d, 0.0)


def recall_at_k(emb: LabeledEmbeddings, k: int) -> float:
    """Fraction of queries with a same-class point among their ``k`` nearest neighbours.

    Euclidean distance; the query itself is excluded; equal distances are ordered by index.
    """
    if not 1 <= k < emb.n:
        raise ValueError(f"k must satisfy 1 <= k < N={emb.n}")
    diff = emb.vectors[:, None, :] - emb.vectors[None, :, :]
    d = np.sqrt((diff * diff).sum(-1))
    np.fill_diagonal(d, np.inf)
    nn_idx = np.argsort(d, axis=1, kind="stable")[:, :k]
    hits = (emb.labels[nn_idx] == emb.labels[:, None]).any(axis=1)
    return float(hits.mean())


@dataclass
class KMeansResult:
    labels: np.ndarray
    centers: np.ndarray
    inertia_history: list[float]

    @property
    def inertia(self) -> float:
        return self.inertia_history[-1]


def _kmeanspp_seed(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(x)
    chosen = [int(rng.integers(n))]
    closest = ((x - x[chosen[0]]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = closest.sum()
        if total > 0:
            idx = int(rng.choice(n, p=closest / total))
        else:  # all points coincide with a centre already
            rest = np.setdiff1d(np.arange(n), chosen)
            idx = int(rng.choice(rest))
        chosen.append(idx)
        closest = np.minimum(closest, ((x - x[idx]) ** 2).sum(axis=1))
    return x[chosen].copy()


def kmeans_pp(vectors, k: int, rng: np.random.Generator, max_iter: int = MAX_LLOYD_ITERS) -> KMeansResult:
    """k-means++ seeding followed by Lloyd iterations until the assignment stops changing."""
    x = np.asarray(vectors, dtype=np.float64)
    if not 1 <= k <= len(x):
        raise ValueError(f"k={k} must lie in [1, N={len(x)}]")
    centers = _kmeanspp_seed(x, k, rng)
    labels, history = None, []
    for _ in range(max_iter):
        d = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(-1)
        new_labels = np.argmin(d, axis=1)
        history.append(float(d[np.arange(len(x)), new_labels].sum()))
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        point_d = d[np.arange(len(x)), labels]
        for j in range(k):
            members = labels == j
            if members.any():
                centers[j] = x[members].mean(axis=0)
            else:
                far = int(np.argmax(point_d))
                centers[j] = x[far]
                point_d[far] = 0.0
    return KMeansResult(labels, centers, history)


def _entropy(counts: np.ndarray) -> float:
    p = counts[counts > 0] / counts.sum()
    return float(-(p * np.log(p)).sum())


def nmi(pred, true, average: str = "geometric") -> float:
    """Normalized mutual information; ``average`` is ``geometric`` (sqrt) or ``arithmetic``."""
    pred, true = np.asarray(pred), np.asarray(true)
    if pred.shape != true.shape:
        raise ValueError("label arrays differ in length")
    _, pi = np.unique(pred, return_inverse=True)
    _, ti = np.unique(true, return_inverse=True)
    table = np.zeros((pi.max() + 1, ti.max() + 1))
    np.add.at(table, (pi, ti), 1.0)
    n = table.sum()
    hp, ht = _entropy(table.sum(axis=1)), _entropy(table.sum(axis=0))
    if hp == 0.0 and ht == 0.0:
        return 1.0
    if hp == 0.0 or ht == 0.0:
        return 0.0
    outer = table.sum(axis=1)[:, None] * table.sum(axis=0)[None, :]
    nz = table > 0
    mi = float((table[nz] / n * np.log(table[nz] * n / outer[nz])).sum())
    if average == "geometric":
        denom = np.sqrt(hp * ht)
    elif average == "arithmetic":
        denom = (hp + ht) / 2
    else:
        raise ValueError(f"unknown average {average!r}")
    return float(min(max(mi / denom, 0.0), 1.0))


def best_nmi_over_restarts(emb: LabeledEmbeddings, k: int | None = None, restarts: int = 100,
                           seed: int = 0, average: str = "geometric") -> float:
    """Best NMI over independent k-means++ runs.

    Restart ``i`` uses the ``i``-th child of ``SeedSequence(seed)``, so a larger
    ``restarts`` always includes the runs of a smaller one.
    """
    k = emb.num_classes if k is None else k
    children = np.random.SeedSequence(seed).spawn(restarts)
    return max(nmi(kmeans_pp(emb.vectors, k, np.random.default_rng(c)).labels, emb.labels, average)
               for c in children)


# --- projections -------------------------------------------------------------

def pca_2d(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    centered = x - x.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    comps = vt[:2]
    if comps.shape[0] < 2:
        comps = np.vstack([comps, np.zeros((2 - comps.shape[0], x.shape[1]))])
    return centered @ comps.T


def _binary_search_p(d2: np.ndarray, perplexity: float, tol: float = 1e-5, max_tries: int = 100) -> np.ndarray:
    """Row-conditional affinities whose entropy matches ``log(perplexity)``."""
    n = len(d2)
    target = np.log(perplexity)
    p = np.zeros((n, n))
    for i in range(n):
        di = np.delete(d2[i], i)
        beta, lo, hi = 1.0, -np.inf, np.inf
        for _ in range(max_tries):
            w = np.exp(-(di - di.min()) * beta)
            s = w.sum()
            h = np.log(s) + beta * ((di - di.min()) * w).sum() / s
            if abs(h - target) < tol:
                break
            if h > target:
                lo = beta
                beta = beta * 2 if hi == np.inf else (beta + hi) / 2
            else:
                hi = beta
                beta = beta / 2 if lo == -np.inf else (beta + lo) / 2
        p[i, np.arange(n) != i] = w / s
    return p


@dataclass
class TSNEResult:
    embedding: np.ndarray
    kl_history: list[float]


def tsne(x, perplexity: float = 30.0, n_iter: int = 1000, learning_rate: float = 200.0,
         exaggeration: float = 12.0, exaggeration_iters: int = 250, seed: int = 0) -> TSNEResult:
    """Exact O(N^2) t-SNE. ``kl_history[t]`` is KL(P||Q) before update ``t`` (un-exaggerated P)."""
    x = np.asarray(x, dtype=np.float64)
    n = len(x)
    if n < 3:
        raise ValueError("t-SNE needs at least 3 points")
    perplexity = min(perplexity, (n - 1) / 3.0)
    cond = _binary_search_p(_sq_dists(x), perplexity)
    p = np.maximum((cond + cond.T) / (2.0 * n), 1e-12)
    np.fill_diagonal(p, 0.0)
    rng = np.random.default_rng(seed)
    y = rng.normal(0.0, 1e-4, size=(n, 2))
    update = np.zeros_like(y)
    gains = np.ones_like(y)
    history = []
    for it in range(n_iter):
        num = 1.0 / (1.0 + _sq_dists(y))
        np.fill_diagonal(num, 0.0)
        q = np.maximum(num / num.sum(), 1e-12)
        off = ~np.eye(n, dtype=bool)
        history.append(float((p[off] * np.log(p[off] / q[off])).sum()))
        pe = p * exaggeration if it < exaggeration_iters else p
        w = (pe - q) * num
        grad = 4.0 * (np.diag(w.sum(axis=1)) - w) @ y
        momentum = 0.5 if it < exaggeration_iters else 0.8
        same_sign = np.sign(grad) == np.sign(update)
        gains = np.where(same_sign, gains * 0.8, gains + 0.2).clip(0.01)
        update = momentum * update - learning_rate * gains * grad
        y = y + update
        y = y - y.mean(axis=0)
    num = 1.0 / (1.0 + _sq_dists(y))
    np.fill_diagonal(num, 0.0)
    q = np.maximum(num / num.sum(), 1e-12)
    off = ~np.eye(n, dtype=bool)
    history.append(float((p[off] * np.log(p[off] / q[off])).sum()))
    return TSNEResult(y, history)


def project_2d(emb: LabeledEmbeddings | np.ndarray, method: str = "pca", **params) -> np.ndarray:
    x = emb.vectors if isinstance(emb, LabeledEmbeddings) else np.asarray(emb, dtype=np.float64)
    if method == "pca":
        return pca_2d(x)
    if method == "tsne":
        return tsne(x, **params).embedding
    raise ValueError(f"unknown projection method {method!r}")


# --- model-facing extraction -------------------------------------------------

def extract_style_embeddings(bundle, corpus, font_ids: Sequence[str], glyphs_per_font: int | Sequence[str],
                             batch_size: int = 64) -> LabeledEmbeddings:
    """Normalized style embeddings of single glyphs, each replicated across the style-input channels."""
    import torch

    from .models import encode_style, normalize_embedding

    if isinstance(glyphs_per_font, int):
        chars = list(corpus.chars[:glyphs_per_font])
        if len(chars) < glyphs_per_font:
            raise ValueError(f"corpus has only {len(chars)} characters")
    else:
        chars = list(glyphs_per_font)
    reps = bundle.config.style_in
    keys = [(f, c) for f in font_ids for c in chars]
    out = []
    bundle.eval()
    with torch.no_grad():
        for start in range(0, len(keys), batch_size):
            batch = np.stack([corpus.image(f, c) for f, c in keys[start:start + batch_size]])
            x = torch.from_numpy(batch)[:, None].repeat(1, reps, 1, 1)
            out.append(normalize_embedding(encode_style(bundle, x)).double().numpy())
    label_map = {f: i for i, f in enumerate(font_ids)}
    return LabeledEmbeddings(np.concatenate(out), np.array([label_map[f] for f, _ in keys]),
                             [f for f, _ in keys], [c for _, c in keys])


# --- files -------------------------------------------------------------------

def write_embeddings(emb: LabeledEmbeddings, path: str | Path) -> None:
    """Header line (JSON: N, d, label map) followed by CSV rows ``font_id,char_id,label,v0..``."""
    fonts = emb.font_ids or [str(l) for l in emb.labels]
    chars = emb.char_ids or [""] * emb.n
    label_map = {str(f): int(l) for f, l in zip(fonts, emb.labels)}
    buf = io.StringIO()
    buf.write(json.dumps({"N": emb.n, "d": emb.vectors.shape[1], "label_map": label_map}, sort_keys=True) + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    for f, c, l, v in zip(fonts, chars, emb.labels, emb.vectors):
        writer.writerow([f, c, int(l), *(repr(float(t)) for t in v)])
    Path(path).write_text(buf.getvalue())


def read_embeddings(path: str | Path) -> LabeledEmbeddings:
    lines = Path(path).read_text().splitlines()
    header = json.loads(lines[0])
    rows = list(csv.reader(lines[1:]))
    if len(rows) != header["N"]:
        raise ValueError(f"{path}: header says N={header['N']}, found {len(rows)} rows")
    vectors = np.array([[float(t) for t in r[3:]] for r in rows])
    if vectors.shape[1] != header["d"]:
        raise ValueError(f"{path}: header says d={header['d']}")
    return LabeledEmbeddings(vectors, np.array([int(r[2]) for r in rows]),
                             [r[0] for r in rows], [r[1] for r in rows])


def write_projection_csv(emb: LabeledEmbeddings, coords: np.ndarray, path: str | Path) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["font_id", "char_id", "x", "y"])
    fonts = emb.font_ids or [str(l) for l in emb.labels]
    chars = emb.char_ids or [""] * emb.n
    for f, c, (px, py) in zip(fonts, chars, coords):
        writer.writerow([f, c, repr(float(px)), repr(float(py))])
    Path(path).write_text(buf.getvalue())
