"""Small end-to-end run of every CLI subcommand, shared by the CLI and acceptance tests."""

from pathlib import Path

from fontdml.cli import run


def run_all_subcommands(root: Path) -> dict[str, Path]:
    """Run every subcommand once under ``root``; returns the output directory of each."""
    out = {name: root / name for name in ("synth", "import", "pretrain", "finetune", "emd", "generate",
                                          "eval_images", "eval_embeddings", "project_pca", "project_tsne")}
    steps = [
        ["dataset", "synth", "--fonts", "5", "--chars", "12", "--seed", "3", "-o", out["synth"]],
        ["dataset", "import", "--root", out["synth"], "-o", out["import"]],
        ["train", "agis-pretrain", "--data", out["import"], "--epochs", "1", "--seed", "1", "-o", out["pretrain"]],
        ["train", "agis-finetune", "--data", out["import"], "--checkpoint", out["pretrain"] / "final.ckpt",
         "--epochs", "1", "--seed", "1", "-o", out["finetune"]],
        ["train", "emd", "--data", out["import"], "--epochs", "1", "--seed", "1", "-o", out["emd"]],
        ["generate", "--data", out["import"], "--checkpoint", out["finetune"] / "final.ckpt",
         "-o", out["generate"]],
        ["eval", "images", "--generated", out["generate"], "--truth", out["import"], "-o", out["eval_images"]],
        ["eval", "embeddings", "--data", out["import"], "--checkpoint", out["pretrain"] / "final.ckpt",
         "--glyphs", "12", "--restarts", "5", "-o", out["eval_embeddings"]],
        ["project", "--embeddings", out["eval_embeddings"] / "embeddings.txt", "--method", "pca",
         "-o", out["project_pca"]],
        ["project", "--embeddings", out["eval_embeddings"] / "embeddings.txt", "--method", "tsne",
         "--perplexity", "3", "-o", out["project_tsne"]],
    ]
    for argv in steps:
        code = run([str(a) for a in argv])
        if code != 0:
            raise RuntimeError(f"fontdml {' '.join(map(str, argv))} exited with {code}")
    return out


def tree_bytes(directory: Path) -> dict[str, bytes]:
    return {str(p.relative_to(directory)): p.read_bytes() for p in sorted(directory.rglob("*")) if p.is_file()}
