"""
A synthetic glyph corpus
========================

Procedural "fonts" stand in for a licensed font collection. Every font is a
fixed set of style parameters (stroke width, slant, serifs, contrast, jitter)
applied to shared character skeletons, so the font identity is a real,
learnable signal.
"""

from pathlib import Path

import numpy as np

from fontdml.cli import emit_comparison_grid
from fontdml.data import import_corpus, sample_style_refs, synthesize_corpus, write_corpus

out = Path("runs/demos/01")

# 26 fonts x 50 characters; 20 fonts train, 6 are held out. 10 characters are
# kept aside for validation.
corpus = synthesize_corpus(26, 50, seed=0)
print("train fonts", len(corpus.train_fonts), "eval fonts", len(corpus.eval_fonts))
print("train chars", len(corpus.train_chars), "val chars", len(corpus.val_chars))
print("style of", corpus.train_fonts[0], corpus.style_params[corpus.train_fonts[0]])

# The content font is separate; the generator sees it as "which character to draw".
print("content font:", corpus.content_font_id, len(corpus.content_glyphs), "glyphs")

# A few-shot budget: n = 5 reference glyphs of one held-out font.
font = corpus.eval_fonts[0]
refs = corpus.reference_set(font, corpus.chars[:5])
rng = np.random.default_rng(0)
drawn = sample_style_refs(refs, 4, rng)  # m = 4 distinct refs per step
print("sampled", [g.char_id for g in drawn])

# Write to disk in the interchange layout and read it back.
write_corpus(corpus, out / "corpus")
back = import_corpus(out / "corpus")
print("re-imported", len(back.glyphs), "glyphs")

# Two fonts side by side: top row is the content font, bottom row a styled font.
chars = corpus.chars[:10]
sheet = {font: {c: corpus.image(font, c) for c in chars}}
content = {font: {c: corpus.content_glyphs[c].pixels for c in chars}}
emit_comparison_grid(sheet, content, None, out / "content_vs_style.png", chars)
print("wrote", out / "content_vs_style.png")
