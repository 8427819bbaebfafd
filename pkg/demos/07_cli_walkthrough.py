"""
The command line, end to end
============================

Every subcommand on a tiny corpus with one-epoch schedules. The same calls
work from a shell as ``fontdml <subcommand> ...``.
"""

from pathlib import Path

from fontdml.cli import run

root = Path("runs/demos/07")


def fontdml(*argv):
    argv = [str(a) for a in argv]
    print("$ fontdml", " ".join(argv))
    code = run(argv)
    print("  exit", code)
    return code


fontdml("dataset", "synth", "--fonts", "6", "--chars", "12", "--seed", "0", "-o", root / "data")
fontdml("train", "agis-pretrain", "--data", root / "data", "--epochs", "2", "--set", "loss.lambda_dml=1.0",
        "-o", root / "pretrain")
fontdml("train", "agis-finetune", "--data", root / "data", "--checkpoint", root / "pretrain/final.ckpt",
        "--epochs", "3", "--refs", "5", "-o", root / "finetune")
fontdml("train", "emd", "--data", root / "data", "--epochs", "1", "-o", root / "emd")
fontdml("generate", "--data", root / "data", "--checkpoint", root / "finetune/final.ckpt", "-o", root / "gen")
fontdml("eval", "images", "--generated", root / "gen", "--truth", root / "data", "-o", root / "eval")
fontdml("eval", "embeddings", "--data", root / "data", "--checkpoint", root / "pretrain/final.ckpt",
        "--glyphs", "12", "-o", root / "emb")
fontdml("project", "--embeddings", root / "emb/embeddings.txt", "--method", "tsne", "--perplexity", "5",
        "-o", root / "proj")

# Mistakes exit non-zero: 2 for usage/config errors, 3 for data errors.
fontdml("train", "emd", "--data", root / "data", "--set", "schedule.warmup=5")
fontdml("train", "emd", "--data", root / "missing")

print((root / "eval/image_metrics.csv").read_text())
