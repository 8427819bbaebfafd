"""
Pretraining and few-shot fine-tuning
====================================

A short version of the full recipe on a small corpus: adversarial pretraining
with the metric-learning head, then adapting to one unseen font from five
glyphs. The full schedule is 20 + 200 epochs; here both are cut short so the
script finishes in a couple of minutes on one CPU core.
"""

from pathlib import Path

from fontdml.cli import emit_comparison_grid
from fontdml.data import synthesize_corpus
from fontdml.losses import LossWeights
from fontdml.models import ModelConfig
from fontdml.training import TrainSchedule, finetune_agis, generate, pretrain_agis, reference_l1

out = Path("runs/demos/03")
out.mkdir(parents=True, exist_ok=True)

corpus = synthesize_corpus(10, 20, seed=0)
config = ModelConfig(num_classes=len(corpus.train_fonts))
schedule = TrainSchedule.defaults("agis_pretrain", epochs=4, seed=0)
state = pretrain_agis(corpus, config, schedule, LossWeights(lambda_dml=1.0))
for rec in state.history[:: max(1, len(state.history) // 5)]:
    print(f"step {rec['step']:3d}  l1 {rec['l1']:.4f}  cx {rec['cx']:.3f}  dml {rec['dml']:.3f}")
print("learning rates per epoch", state.lr_log)
state.write_loss_log(out / "pretrain_loss.csv")

# Few-shot phase: n = 5 references of a held-out font. Pair-wise losses only see
# those five glyphs; every other character contributes adversarial terms only.
font = corpus.eval_fonts[0]
refs = corpus.reference_set(font, corpus.chars[:5])
ft_sched = TrainSchedule.defaults("agis_finetune", epochs=15, seed=0)
ft = finetune_agis(state, corpus, refs, ft_sched)
print("reference L1 before", round(reference_l1(state, corpus, refs), 4),
      "after", round(reference_l1(ft, corpus, refs), 4))
print("DML head gradient during fine-tuning:", max(r["dml_head_grad_norm"] for r in ft.history))

# Unseen characters of the target font.
chars = [c for c in corpus.chars if c not in refs.char_ids][:10]
images = generate(ft, corpus, chars, refs)
emit_comparison_grid({font: {g.char_id: g.pixels for g in images}},
                     {font: {c: corpus.image(font, c) for c in chars}},
                     {font: [g.pixels for g in refs.images]}, out / "comparison.png", chars)
ft.save(out / "finetuned.ckpt")
print("wrote", out / "comparison.png")
