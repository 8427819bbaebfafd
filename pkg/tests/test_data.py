import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image

from fontdml.data import (GlyphImage, IngestionError, SplitValidationError, StyleParams,
                          content_reference, import_corpus, render_glyph, sample_style_refs,
                          synthesize_corpus, write_corpus)


@pytest.fixture(scope="module")
def corpus():
    return synthesize_corpus(20, 50, seed=1)


def test_synthesis_is_deterministic():
    a = synthesize_corpus(2, 2, seed=7)
    b = synthesize_corpus(2, 2, seed=7)
    assert a.glyphs.keys() == b.glyphs.keys()
    for key in a.glyphs:
        assert a.glyphs[key].pixels.tobytes() == b.glyphs[key].pixels.tobytes()


@pytest.mark.parametrize("fonts,chars", [(1, 5), (0, 5), (5, 1)])
def test_synthesis_rejects_bad_counts(fonts, chars):
    with pytest.raises(ValueError):
        synthesize_corpus(fonts, chars, seed=0)


def test_synthesized_corpus_size_and_range(corpus):
    assert len(corpus.glyphs) == 20 * 50
    stack = np.stack([g.pixels for g in corpus.glyphs.values()])
    assert stack.shape == (1000, 64, 64)
    assert stack.min() >= 0.0 and stack.max() <= 1.0
    # every glyph carries some ink and some background
    assert (stack.reshape(1000, -1).min(axis=1) < 0.5).all()
    assert (stack.reshape(1000, -1).max(axis=1) == 1.0).all()


def test_fonts_share_style_params(corpus):
    for (font, char), glyph in list(corpus.glyphs.items())[::37]:
        again = render_glyph(corpus.skeletons[char], corpus.style_params[font], 64)
        assert np.array_equal(again, glyph.pixels)


def test_style_application_is_deterministic():
    skel = synthesize_corpus(2, 2, seed=3).skeletons["c0000"]
    style = StyleParams(stroke_width=3, slant=0.2, serif=True, contrast=0.8, jitter_seed=11)
    assert np.array_equal(render_glyph(skel, style), render_glyph(skel, style))


def test_default_split_matches_desk_scale():
    c = synthesize_corpus(26, 50, seed=0)
    assert len(c.train_fonts) == 20 and len(c.eval_fonts) == 6
    assert len(c.train_chars) == 40 and len(c.val_chars) == 10


def test_splits_disjoint_and_content_font_excluded(corpus):
    assert not set(corpus.train_fonts) & set(corpus.eval_fonts)
    assert not set(corpus.train_chars) & set(corpus.val_chars)
    assert corpus.content_font_id not in corpus.train_fonts + corpus.eval_fonts
    assert all(f != corpus.content_font_id for f, _ in corpus.glyphs)


def test_content_reference_constant(corpus):
    a = content_reference(corpus, "c0003")
    b = content_reference(corpus, "c0003")
    assert a.pixels.tobytes() == b.pixels.tobytes()
    with pytest.raises(KeyError):
        content_reference(corpus, "nope")


def test_glyph_image_validation():
    with pytest.raises(ValueError):
        GlyphImage(np.full((4, 4), 1.5), "f", "c")
    with pytest.raises(ValueError):
        GlyphImage(np.zeros((4, 5)), "f", "c")
    g = GlyphImage(np.zeros((4, 4)), "f", "c")
    with pytest.raises(ValueError):
        g.pixels[0, 0] = 1.0


# --- sampling ---

def _refs(corpus, n):
    return corpus.reference_set("f000", corpus.chars[:n], allowed_counts=None)


def test_sample_full_set(corpus):
    refs = _refs(corpus, 5)
    drawn = sample_style_refs(refs, 5, np.random.default_rng(0))
    assert sorted(g.char_id for g in drawn) == sorted(refs.char_ids)


def test_sample_too_many(corpus):
    with pytest.raises(ValueError):
        sample_style_refs(_refs(corpus, 5), 6, np.random.default_rng(0))


def test_sample_uniform_frequency(corpus):
    refs = _refs(corpus, 5)
    rng = np.random.default_rng(123)
    draws = 10_000
    counts = np.zeros(5)
    index = {c: i for i, c in enumerate(refs.char_ids)}
    for _ in range(draws):
        counts[index[sample_style_refs(refs, 1, rng)[0].char_id]] += 1
    p = 1 / 5
    sigma = np.sqrt(draws * p * (1 - p))
    assert np.all(np.abs(counts - draws * p) < 3 * sigma)
    chi2 = ((counts - draws * p) ** 2 / (draws * p)).sum()
    assert chi2 < 18.47  # chi-square(4) 99.9% quantile


@given(st.integers(1, 10), st.integers(0, 2**32 - 1))
@settings(max_examples=50, deadline=None)
def test_sample_never_repeats(m, seed):
    c = _SMALL
    refs = c.reference_set("f000", c.chars[:10], allowed_counts=None)
    drawn = sample_style_refs(refs, m, np.random.default_rng(seed))
    ids = [g.char_id for g in drawn]
    assert len(ids) == len(set(ids)) == m


_SMALL = synthesize_corpus(3, 12, seed=5)


def test_reference_set_default_counts(corpus):
    with pytest.raises(ValueError):
        corpus.reference_set("f000", corpus.chars[:4])
    assert corpus.reference_set("f000", corpus.chars[:10]).n == 10


# --- import / export ---

def _write_tiny(root, invert=False, missing=None):
    fonts, chars = ["a", "b"], ["x", "y", "z"]
    rng = np.random.default_rng(0)
    for font in fonts + ["base"]:
        (root / font).mkdir(parents=True)
        for char in chars:
            if missing == (font, char):
                continue
            arr = np.full((8, 8), 0 if invert else 255, np.uint8)
            arr[2:6, 3:5] = 255 if invert else rng.integers(0, 40)
            Image.fromarray(arr, mode="L").save(root / font / f"{char}.png")
    manifest = {"image_size": 8, "content_font": "base", "train_fonts": ["a"], "eval_fonts": ["b"],
                "train_chars": ["x", "y"], "val_chars": ["z"], "invert": invert}
    (root / "manifest.json").write_text(json.dumps(manifest))
    return manifest


def test_import_counts(tmp_path):
    _write_tiny(tmp_path)
    c = import_corpus(tmp_path)
    assert len(c.glyphs) == 6
    assert c.content_font_id == "base" and len(c.content_glyphs) == 3


def test_import_missing_file_names_pair(tmp_path):
    _write_tiny(tmp_path, missing=("b", "y"))
    with pytest.raises(IngestionError, match=r"font=b, char=y"):
        import_corpus(tmp_path)


def test_import_inverted_source(tmp_path):
    _write_tiny(tmp_path, invert=True)
    c = import_corpus(tmp_path)
    px = c.glyphs[("a", "x")].pixels
    # white strokes on black in the file -> ink near 0, background near 1
    assert px[2:6, 3:5].max() < 0.05
    assert px[0, 0] > 0.95
    hist, _ = np.histogram(px, bins=[0, 0.1, 0.9, 1.0001])
    assert hist[0] == 8 and hist[2] == 56


def test_import_rejects_overlapping_splits(tmp_path):
    manifest = _write_tiny(tmp_path)
    manifest["eval_fonts"] = ["a"]
    (tmp_path / "manifest.json").write_text(json.dumps(manifest))
    with pytest.raises(SplitValidationError):
        import_corpus(tmp_path)


def test_import_rejects_unknown_manifest_key(tmp_path):
    manifest = _write_tiny(tmp_path)
    manifest["colour"] = True
    (tmp_path / "manifest.json").write_text(json.dumps(manifest))
    with pytest.raises(Exception, match="unknown keys"):
        import_corpus(tmp_path)


def test_write_then_import_round_trip(tmp_path):
    c = synthesize_corpus(3, 4, seed=2)
    write_corpus(c, tmp_path)
    back = import_corpus(tmp_path)
    assert back.train_fonts == c.train_fonts and back.val_chars == c.val_chars
    for key, g in c.glyphs.items():
        assert np.abs(back.glyphs[key].pixels - g.pixels).max() <= 0.5 / 255 + 1e-6


@st.composite
def _manifests(draw):
    fonts = draw(st.lists(st.sampled_from("abcdefgh"), min_size=2, max_size=6, unique=True))
    chars = draw(st.lists(st.sampled_from("pqrstuvw"), min_size=2, max_size=6, unique=True))
    cut_f = draw(st.integers(1, len(fonts) - 1))
    cut_c = draw(st.integers(1, len(chars) - 1))
    leak = draw(st.booleans())
    return fonts[:cut_f], fonts[cut_f:] + ([fonts[0]] if leak else []), chars[:cut_c], chars[cut_c:], leak


@given(_manifests())
@settings(max_examples=40, deadline=None)
def test_split_validation_property(manifest):
    from fontdml.data import GlyphCorpus

    train_f, eval_f, train_c, val_c, leak = manifest
    blank = np.ones((4, 4))
    glyphs = {(f, c): GlyphImage(blank, f, c) for f in set(train_f + eval_f) for c in train_c + val_c}
    content = {c: GlyphImage(blank, "base", c) for c in train_c + val_c}
    if leak:
        with pytest.raises(SplitValidationError):
            GlyphCorpus(glyphs, content, tuple(train_f), tuple(eval_f), tuple(train_c), tuple(val_c), "base", 4)
    else:
        c = GlyphCorpus(glyphs, content, tuple(train_f), tuple(eval_f), tuple(train_c), tuple(val_c), "base", 4)
        assert not set(c.train_fonts) & set(c.eval_fonts)
        assert not set(c.train_chars) & set(c.val_chars)
