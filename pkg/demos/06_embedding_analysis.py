"""
How well do style embeddings separate fonts?
============================================

Style embeddings of single glyphs, grouped by font: Recall@k, the best NMI of
k-means++ over 100 restarts, and a 2-D t-SNE map written as CSV.
"""

from pathlib import Path

import numpy as np
import torch

from fontdml.data import synthesize_corpus
from fontdml.embedding import (LabeledEmbeddings, best_nmi_over_restarts, extract_style_embeddings, kmeans_pp,
                               recall_at_k, tsne, write_embeddings, write_projection_csv)
from fontdml.models import ModelBundle, ModelConfig

out = Path("runs/demos/06")
out.mkdir(parents=True, exist_ok=True)

# Warm-up on points with an obvious answer.
rng = np.random.default_rng(0)
blobs = np.concatenate([rng.normal(size=(20, 2)) + c for c in ([0, 0], [8, 0], [0, 8])])
labels = np.repeat([0, 1, 2], 20)
toy = LabeledEmbeddings(blobs, labels)
print("blobs: R@1", recall_at_k(toy, 1), "best NMI", round(best_nmi_over_restarts(toy, restarts=10), 4))
hist = kmeans_pp(blobs, 3, rng).inertia_history
print("Lloyd inertia per iteration", [round(v, 2) for v in hist])

# Now an (untrained) style encoder on 30 fonts x 30 glyphs. Load a trained
# checkpoint with TrainState.load to see the effect of training.
corpus = synthesize_corpus(31, 30, seed=0, num_eval_fonts=30)
torch.manual_seed(0)
bundle = ModelBundle(ModelConfig(num_classes=2))
emb = extract_style_embeddings(bundle, corpus, corpus.eval_fonts, 30)
print("embeddings", emb.vectors.shape, "R@1", round(recall_at_k(emb, 1), 4),
      "R@2", round(recall_at_k(emb, 2), 4))
print("best NMI over 100 restarts", round(best_nmi_over_restarts(emb, restarts=100, seed=0), 4))
write_embeddings(emb, out / "embeddings.txt")

res = tsne(emb.vectors, seed=0)
print("t-SNE KL", round(res.kl_history[0], 4), "->", round(res.kl_history[-1], 4))
write_projection_csv(emb, res.embedding, out / "tsne.csv")
print("wrote", out / "tsne.csv")
