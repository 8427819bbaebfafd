"""Glyph corpora: procedural synthetic fonts, PNG import/export, splits, sampling.

Pixel convention throughout the package: values in [0, 1], 0 = ink, 1 = background.
A corpus on disk is laid out as ``root/<font_id>/<char_id>.png`` (8-bit grayscale)
next to a ``manifest.json`` with the keys ``image_size``, ``content_font``,
``train_fonts``, ``eval_fonts``, ``train_chars``, ``val_chars`` and ``invert``.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from PIL import Image

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
MANIFEST_KEYS = ("image_size", "content_font", "train_fonts", "eval_fonts",
                 "train_chars", "val_chars", "invert")
DEFAULT_REF_COUNTS = (5, 10, 15, 30)
CONTENT_FONT_ID = "content"


class CorpusError(Exception):
    """Base class for corpus loading and validation failures."""


class IngestionError(CorpusError):
    pass


class SplitValidationError(CorpusError):
    pass


@dataclass(frozen=True)
class GlyphImage:
    pixels: np.ndarray
    font_id: str
    char_id: str

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float32)
        if px.ndim != 2 or px.shape[0] != px.shape[1]:
            raise ValueError(f"glyph {self.font_id}/{self.char_id} must be square, got {px.shape}")
        if px.size and (px.min() < 0.0 or px.max() > 1.0):
            raise ValueError(f"glyph {self.font_id}/{self.char_id} has pixels outside [0, 1]")
        px = px.copy()
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def size(self) -> int:
        return self.pixels.shape[0]


@dataclass(frozen=True)
class StyleParams:
    """Rendering parameters shared by every glyph of one synthetic font."""

    stroke_width: int = 2
    slant: float = 0.0
    serif: bool = False
    contrast: float = 1.0
    jitter_seed: int = 0

    def __post_init__(self):
        if self.stroke_width < 1:
            raise ValueError("stroke_width must be >= 1")
        if not 0.0 < self.contrast <= 1.0:
            raise ValueError("contrast must lie in (0, 1]")


@dataclass(frozen=True)
class ReferenceSet:
    """The ``n`` glyphs of one font that are visible when generating it."""

    font_id: str
    char_ids: tuple[str, ...]
    images: tuple[GlyphImage, ...]
    allowed_counts: tuple[int, ...] | None = DEFAULT_REF_COUNTS

    def __post_init__(self):
        object.__setattr__(self, "char_ids", tuple(self.char_ids))
        object.__setattr__(self, "images", tuple(self.images))
        if [g.char_id for g in self.images] != list(self.char_ids):
            raise ValueError("reference images do not match char_ids")
        if len(set(self.char_ids)) != len(self.char_ids):
            raise ValueError("reference characters must be distinct")
        if not self.char_ids:
            raise ValueError("reference set is empty")
        if self.allowed_counts is not None and self.n not in self.allowed_counts:
            raise ValueError(f"n={self.n} not in allowed reference counts {self.allowed_counts}")

    @property
    def n(self) -> int:
        return len(self.char_ids)


@dataclass(frozen=True)
class GlyphCorpus:
    glyphs: Mapping[tuple[str, str], GlyphImage]
    content_glyphs: Mapping[str, GlyphImage]
    train_fonts: tuple[str, ...]
    eval_fonts: tuple[str, ...]
    train_chars: tuple[str, ...]
    val_chars: tuple[str, ...]
    content_font_id: str = CONTENT_FONT_ID
    image_size: int = 64
    style_params: Mapping[str, StyleParams] = field(default_factory=dict)
    skeletons: Mapping[str, "Skeleton"] = field(default_factory=dict)

    def __post_init__(self):
        validate_splits(self.train_fonts, self.eval_fonts, self.train_chars, self.val_chars,
                        self.content_font_id)
        for font in self.fonts:
            for char in self.chars:
                if (font, char) not in self.glyphs:
                    raise SplitValidationError(f"no glyph for pair ({font}, {char})")
        for char in self.chars:
            if char not in self.content_glyphs:
                raise SplitValidationError(f"content font lacks character {char}")

    @property
    def fonts(self) -> tuple[str, ...]:
        return self.train_fonts + self.eval_fonts

    @property
    def chars(self) -> tuple[str, ...]:
        return self.train_chars + self.val_chars

    def image(self, font_id: str, char_id: str) -> np.ndarray:
        if font_id == self.content_font_id:
            return content_reference(self, char_id).pixels
        try:
            return self.glyphs[(font_id, char_id)].pixels
        except KeyError:
            raise KeyError(f"no glyph ({font_id}, {char_id})") from None

    def reference_set(self, font_id: str, char_ids: Sequence[str], allowed_counts=DEFAULT_REF_COUNTS) -> ReferenceSet:
        for c in char_ids:
            if (font_id, c) not in self.glyphs:
                raise ValueError(f"reference glyph ({font_id}, {c}) not in corpus")
        return ReferenceSet(font_id, tuple(char_ids), tuple(self.glyphs[(font_id, c)] for c in char_ids),
                            allowed_counts)


def validate_splits(train_fonts, eval_fonts, train_chars, val_chars, content_font_id):
    if set(train_fonts) & set(eval_fonts):
        raise SplitValidationError(f"train/eval fonts overlap: {sorted(set(train_fonts) & set(eval_fonts))}")
    if set(train_chars) & set(val_chars):
        raise SplitValidationError(f"train/val chars overlap: {sorted(set(train_chars) & set(val_chars))}")
    if content_font_id in set(train_fonts) | set(eval_fonts):
        raise SplitValidationError(f"content font {content_font_id!r} appears in train/eval fonts")
    for name, ids in (("train_fonts", train_fonts), ("eval_fonts", eval_fonts),
                      ("train_chars", train_chars), ("val_chars", val_chars)):
        if len(set(ids)) != len(ids):
            raise SplitValidationError(f"duplicate ids in {name}")


# --- synthetic fonts ---------------------------------------------------------

@dataclass(frozen=True)
class Skeleton:
    """Character identity: polylines in unit coordinates (x right, y down)."""

    strokes: tuple[tuple[tuple[float, float], ...], ...]


def random_skeleton(rng: np.random.Generator) -> Skeleton:
    strokes = []
    for _ in range(rng.integers(2, 5)):
        n_pts = rng.integers(2, 4)
        pts = rng.uniform(0.18, 0.82, size=(n_pts, 2))
        # snap half the strokes to horizontal/vertical, as in CJK-like glyphs
        if rng.random() < 0.5:
            axis = rng.integers(0, 2)
            pts[1:, axis] = pts[0, axis]
        strokes.append(tuple(map(tuple, pts.round(4).tolist())))
    return Skeleton(tuple(strokes))


def _segments(skeleton: Skeleton, style: StyleParams, size: int) -> np.ndarray:
    jitter = np.random.default_rng(style.jitter_seed)
    segs = []
    for stroke in skeleton.strokes:
        pts = np.asarray(stroke, dtype=np.float64) + jitter.normal(0.0, 0.015, size=(len(stroke), 2))
        # shear around the vertical centre
        pts[:, 0] = pts[:, 0] + style.slant * (0.5 - pts[:, 1])
        pts = pts * (size - 1)
        for a, b in zip(pts[:-1], pts[1:]):
            segs.append((a, b))
        if style.serif:
            for end, other in ((pts[0], pts[1]), (pts[-1], pts[-2])):
                d = end - other
                norm = np.hypot(*d)
                if norm < 1e-9:
                    continue
                perp = np.array([-d[1], d[0]]) / norm
                stub = perp * (1.5 + style.stroke_width)
                segs.append((end, end + stub))
    return np.asarray(segs)


def render_glyph(skeleton: Skeleton, style: StyleParams, size: int = 64) -> np.ndarray:
    """Rasterize a skeleton under a style; anti-aliased, deterministic."""
    segs = _segments(skeleton, style, size)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    p = np.stack([xx.ravel(), yy.ravel()], axis=1)[:, None, :]
    a, b = segs[None, :, 0, :], segs[None, :, 1, :]
    ab = b - a
    t = np.clip(((p - a) * ab).sum(-1) / np.maximum((ab * ab).sum(-1), 1e-12), 0.0, 1.0)
    dist = np.linalg.norm(p - (a + t[..., None] * ab), axis=-1).min(axis=1)
    coverage = np.clip(style.stroke_width + 0.5 - dist, 0.0, 1.0).reshape(size, size)
    return (1.0 - style.contrast * coverage).astype(np.float32)


def random_style(rng: np.random.Generator) -> StyleParams:
    return StyleParams(
        stroke_width=int(rng.integers(1, 5)),
        slant=float(rng.uniform(-0.35, 0.35)),
        serif=bool(rng.random() < 0.5),
        contrast=float(rng.uniform(0.55, 1.0)),
        jitter_seed=int(rng.integers(0, 2**31 - 1)),
    )


def synthesize_corpus(num_fonts: int, num_chars: int, seed: int, *, num_eval_fonts: int | None = None,
                      num_val_chars: int | None = None, image_size: int = 64) -> GlyphCorpus:
    """Build a procedural corpus of ``num_fonts`` styles over ``num_chars`` skeletons.

    Every character is a seeded random stroke composition; every font applies one
    :class:`StyleParams` to all skeletons. A separate plain content font (not counted
    in ``num_fonts``) is always included. Defaults split fonts roughly 10:3 into
    train/eval and characters 4:1 into train/val.
    """
    if num_fonts < 2:
        raise ValueError("need at least 2 fonts for style contrast")
    if num_chars < 2:
        raise ValueError("need at least 2 characters")
    if num_eval_fonts is None:
        num_eval_fonts = max(1, round(num_fonts * 3 / 13))
    if num_val_chars is None:
        num_val_chars = max(1, num_chars // 5)
    if not 1 <= num_eval_fonts < num_fonts:
        raise ValueError("num_eval_fonts must leave at least one training font")
    if not 1 <= num_val_chars < num_chars:
        raise ValueError("num_val_chars must leave at least one training character")

    rng = np.random.default_rng(seed)
    char_ids = [f"c{i:04d}" for i in range(num_chars)]
    font_ids = [f"f{i:03d}" for i in range(num_fonts)]
    skeletons = {c: random_skeleton(rng) for c in char_ids}
    styles = {f: random_style(rng) for f in font_ids}
    content_style = StyleParams(stroke_width=2, slant=0.0, serif=False, contrast=1.0, jitter_seed=seed)

    glyphs = {(f, c): GlyphImage(render_glyph(skeletons[c], styles[f], image_size), f, c)
              for f in font_ids for c in char_ids}
    content = {c: GlyphImage(render_glyph(skeletons[c], content_style, image_size), CONTENT_FONT_ID, c)
               for c in char_ids}
    styles[CONTENT_FONT_ID] = content_style
    return GlyphCorpus(
        glyphs=glyphs, content_glyphs=content,
        train_fonts=tuple(font_ids[:num_fonts - num_eval_fonts]),
        eval_fonts=tuple(font_ids[num_fonts - num_eval_fonts:]),
        train_chars=tuple(char_ids[:num_chars - num_val_chars]),
        val_chars=tuple(char_ids[num_chars - num_val_chars:]),
        content_font_id=CONTENT_FONT_ID, image_size=image_size,
        style_params=styles, skeletons=skeletons,
    )


# --- disk I/O ----------------------------------------------------------------

def _read_png(path: Path, size: int, invert: bool) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"), dtype=np.float32) / 255.0
    if arr.shape != (size, size):
        raise IngestionError(f"{path}: expected {size}x{size}, got {arr.shape[1]}x{arr.shape[0]}")
    return 1.0 - arr if invert else arr


def read_manifest(path: str | Path) -> dict:
    with open(path) as fh:
        manifest = json.load(fh)
    missing = [k for k in MANIFEST_KEYS if k not in manifest and k != "invert"]
    if missing:
        raise CorpusError(f"manifest {path} missing keys: {missing}")
    unknown = set(manifest) - set(MANIFEST_KEYS)
    if unknown:
        raise CorpusError(f"manifest {path} has unknown keys: {sorted(unknown)}")
    manifest.setdefault("invert", False)
    return manifest


def import_corpus(root_path: str | Path, manifest: str | Path | None = None, *, workers: int = 4) -> GlyphCorpus:
    root = Path(root_path)
    spec = read_manifest(manifest if manifest is not None else root / MANIFEST_NAME)
    size, invert = int(spec["image_size"]), bool(spec["invert"])
    content_font = str(spec["content_font"])
    train_fonts, eval_fonts = tuple(map(str, spec["train_fonts"])), tuple(map(str, spec["eval_fonts"]))
    train_chars, val_chars = tuple(map(str, spec["train_chars"])), tuple(map(str, spec["val_chars"]))
    validate_splits(train_fonts, eval_fonts, train_chars, val_chars, content_font)

    pairs = [(f, c) for f in (content_font,) + train_fonts + eval_fonts for c in train_chars + val_chars]

    def load(pair):
        f, c = pair
        path = root / f / f"{c}.png"
        if not path.is_file():
            raise IngestionError(f"missing glyph file for (font={f}, char={c}): {path}")
        return GlyphImage(_read_png(path, size, invert), f, c)

    with ThreadPoolExecutor(max_workers=workers) as pool:
        images = list(pool.map(load, pairs))
    glyphs, content = {}, {}
    for (f, c), img in zip(pairs, images):
        if f == content_font:
            content[c] = img
        else:
            glyphs[(f, c)] = img
    logger.info("imported %d glyphs from %s", len(images), root)
    return GlyphCorpus(glyphs=glyphs, content_glyphs=content, train_fonts=train_fonts, eval_fonts=eval_fonts,
                       train_chars=train_chars, val_chars=val_chars, content_font_id=content_font,
                       image_size=size)


def write_png(pixels: np.ndarray, path: str | Path) -> None:
    arr = np.clip(np.rint(np.asarray(pixels, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(path, optimize=False)


def write_corpus(corpus: GlyphCorpus, root: str | Path) -> Path:
    """Write PNGs and manifest; the result round-trips through :func:`import_corpus`."""
    root = Path(root)
    for (font, char), img in list(corpus.glyphs.items()) + [
            ((corpus.content_font_id, c), g) for c, g in corpus.content_glyphs.items()]:
        (root / font).mkdir(parents=True, exist_ok=True)
        write_png(img.pixels, root / font / f"{char}.png")
    manifest = {
        "image_size": corpus.image_size,
        "content_font": corpus.content_font_id,
        "train_fonts": list(corpus.train_fonts),
        "eval_fonts": list(corpus.eval_fonts),
        "train_chars": list(corpus.train_chars),
        "val_chars": list(corpus.val_chars),
        "invert": False,
    }
    path = root / MANIFEST_NAME
    path.write_text(json.dumps(manifest, indent=2) + "\n")
    return path


# --- sampling ----------------------------------------------------------------

def sample_style_refs(ref_set: ReferenceSet, m: int, rng: np.random.Generator) -> list[GlyphImage]:
    """Draw ``m`` distinct reference glyphs uniformly without replacement."""
    if not 1 <= m <= ref_set.n:
        raise ValueError(f"cannot draw m={m} glyphs from a reference set of n={ref_set.n}")
    idx = rng.choice(ref_set.n, size=m, replace=False)
    return [ref_set.images[i] for i in idx]


def content_reference(corpus: GlyphCorpus, char_id: str) -> GlyphImage:
    try:
        return corpus.content_glyphs[char_id]
    except KeyError:
        raise KeyError(f"content font has no character {char_id!r}") from None
