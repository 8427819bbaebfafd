"""Command-line entry point: ``fontdml <command> ...``.

Exit codes: 0 success, 2 bad arguments or config, 3 data error, 4 numerical failure.
Run settings come from an INI-style config file (``--config``) with sections
``[model]``, ``[schedule]``, ``[loss]``; command-line flags and ``--set section.key=value``
override file values. The fully resolved config is echoed to ``<output>/config.ini``.
"""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

OUTPUT_ROOT_ENV = "FONTDML_OUTPUT_ROOT"
EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

logger = logging.getLogger("fontdml")


class ConfigError(ValueError):
    pass


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


# --- config ------------------------------------------------------------------

MODEL_KEYS = ("embed_dim", "emd_r", "emd_b", "emd_k", "m", "n", "channels", "patch_size", "tau")
SCHEDULE_KEYS = ("epochs", "base_lr", "lr_decay", "batch_size", "seed")
LOSS_KEYS = ("lambda_l1", "lambda_adv", "lambda_cx", "lambda_local", "lambda_dml", "black_threshold",
             "ink_mean_mode")
SECTIONS = {"model": MODEL_KEYS, "schedule": SCHEDULE_KEYS, "loss": LOSS_KEYS}


def _coerce(key: str, raw: str):
    if key == "channels":
        return tuple(int(t) for t in raw.replace(",", " ").split())
    if key in ("lr_decay", "ink_mean_mode"):
        return raw.strip()
    if key in ("embed_dim", "emd_r", "emd_b", "emd_k", "m", "n", "patch_size", "epochs", "batch_size", "seed"):
        return int(raw)
    return float(raw)


def resolve_config(path: str | None, overrides: Mapping[str, Mapping[str, str]]) -> dict[str, dict]:
    """Merge a config file with overrides; unknown sections or keys raise :class:`ConfigError`."""
    raw: dict[str, dict[str, str]] = {s: {} for s in SECTIONS}
    if path:
        cp = configparser.ConfigParser()
        try:
            with open(path) as fh:
                cp.read_file(fh)
        except (OSError, configparser.Error) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        for section in cp.sections():
            if section not in SECTIONS:
                raise ConfigError(f"unknown config section [{section}]")
            for key, value in cp.items(section):
                raw[section][key] = value
    for section, items in overrides.items():
        raw.setdefault(section, {}).update(items)
    resolved = {}
    for section, items in raw.items():
        if section not in SECTIONS:
            raise ConfigError(f"unknown config section [{section}]")
        resolved[section] = {}
        for key, value in items.items():
            if key not in SECTIONS[section]:
                raise ConfigError(f"unknown config key {section}.{key}")
            try:
                resolved[section][key] = _coerce(key, str(value))
            except ValueError as exc:
                raise ConfigError(f"bad value for {section}.{key}: {value!r}") from exc
    return resolved


def write_config(resolved: Mapping[str, Mapping], path: Path) -> None:
    cp = configparser.ConfigParser()
    for section in sorted(resolved):
        cp[section] = {k: (" ".join(map(str, v)) if isinstance(v, tuple) else repr(v) if isinstance(v, float) else str(v))
                       for k, v in sorted(resolved[section].items())}
    with open(path, "w") as fh:
        cp.write(fh)


def _overrides(args) -> dict[str, dict[str, str]]:
    out: dict[str, dict[str, str]] = {}
    flag_map = {"seed": ("schedule", "seed"), "epochs": ("schedule", "epochs"), "lr": ("schedule", "base_lr"),
                "batch_size": ("schedule", "batch_size"), "lambda_dml": ("loss", "lambda_dml"),
                "tau": ("model", "tau"), "embed_dim": ("model", "embed_dim"), "m": ("model", "m"),
                "n": ("model", "n")}
    for attr, (section, key) in flag_map.items():
        value = getattr(args, attr, None)
        if value is not None:
            out.setdefault(section, {})[key] = str(value)
    for item in getattr(args, "set", None) or []:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"--set expects section.key=value, got {item!r}")
        lhs, value = item.split("=", 1)
        section, key = lhs.split(".", 1)
        out.setdefault(section.strip(), {})[key.strip()] = value.strip()
    return out


def _output_dir(args, default_name: str) -> Path:
    if args.output:
        out = Path(args.output)
    else:
        out = Path(os.environ.get(OUTPUT_ROOT_ENV, "runs")) / default_name
    out.mkdir(parents=True, exist_ok=True)
    return out


# --- image sheets --------------------------------------------------------------

def emit_comparison_grid(generated: Mapping[str, Mapping[str, np.ndarray]],
                         ground_truth: Mapping[str, Mapping[str, np.ndarray]],
                         refs: Mapping[str, Sequence[np.ndarray]] | None, out_file: str | Path,
                         char_ids: Sequence[str] | None = None) -> np.ndarray:
    """Write a PNG sheet: per font a ground-truth row directly above the generated row.

    Cells are the glyphs themselves, tiled without gaps or resampling. When ``refs`` is
    given, the reference glyphs of each font are written to a companion ``*_refs.png``.
    Returns the sheet as a float array.
    """
    from .data import write_png

    fonts = sorted(generated)
    if char_ids is None:
        char_ids = sorted(next(iter(generated.values()))) if fonts else []
    if not fonts or not char_ids:
        raise ValueError("comparison grid needs at least one font and one character")
    rows = []
    for font in fonts:
        rows.append(np.hstack([np.asarray(ground_truth[font][c], dtype=np.float64) for c in char_ids]))
        rows.append(np.hstack([np.asarray(generated[font][c], dtype=np.float64) for c in char_ids]))
    sheet = np.vstack(rows)
    out_file = Path(out_file)
    write_png(sheet, out_file)
    if refs:
        width = max(len(r) for r in refs.values())
        size = sheet.shape[1] // len(char_ids)
        ref_rows = [np.hstack(list(refs[f]) + [np.ones((size, size))] * (width - len(refs[f]))) for f in fonts]
        write_png(np.vstack(ref_rows), out_file.with_name(out_file.stem + "_refs.png"))
    return sheet


def read_glyph_tree(root: str | Path, fonts: Sequence[str] | None = None) -> dict[str, dict[str, np.ndarray]]:
    """Load ``root/<font>/<char>.png`` into nested dicts (values in [0, 1])."""
    from PIL import Image

    root = Path(root)
    out = {}
    for font_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        if fonts is not None and font_dir.name not in fonts:
            continue
        glyphs = {}
        for png in sorted(font_dir.glob("*.png")):
            with Image.open(png) as im:
                glyphs[png.stem] = np.asarray(im.convert("L"), dtype=np.float64) / 255.0
        if glyphs:
            out[font_dir.name] = glyphs
    return out


# --- commands ------------------------------------------------------------------

def _cmd_dataset(args) -> int:
    from .data import import_corpus, synthesize_corpus, write_corpus

    out = _output_dir(args, "dataset")
    if args.dataset_cmd == "synth":
        corpus = synthesize_corpus(args.fonts, args.chars, args.seed, num_eval_fonts=args.eval_fonts,
                                   num_val_chars=args.val_chars)
    else:
        corpus = import_corpus(args.root, args.manifest)
        if Path(args.root).resolve() == out.resolve():
            raise UsageError("output directory must differ from the import root")
    write_corpus(corpus, out)
    logger.info("wrote %d glyphs to %s", len(corpus.glyphs), out)
    return EXIT_OK


def _model_config(resolved, variant: str, num_classes: int):
    from .models import ModelConfig

    model = dict(resolved.get("model", {}))
    if variant == "emd":
        model.setdefault("tau", 0.1)
    return ModelConfig(variant=variant, num_classes=num_classes, **model)


def _weights(resolved):
    from .losses import LossWeights

    loss = {k: v for k, v in resolved.get("loss", {}).items() if k.startswith("lambda_")}
    return LossWeights(**loss)


def _schedule(resolved, phase: str, config):
    from .training import TrainSchedule

    return TrainSchedule.defaults(phase, m=config.m, n=config.n, **resolved.get("schedule", {}))


def _finish_training(state, out: Path, resolved) -> None:
    state.save(out / "final.ckpt")
    state.write_loss_log(out / "loss_log.csv")
    state.write_lr_log(out / "lr_log.csv")
    (out / "val_history.json").write_text(json.dumps(state.val_history, indent=2, sort_keys=True) + "\n")
    effective = {s: dict(v) for s, v in resolved.items()}
    effective["model"].update({k: state.config.to_dict()[k] for k in MODEL_KEYS})
    effective["schedule"].update({k: asdict(state.schedule)[k] for k in SCHEDULE_KEYS})
    effective["loss"].update(asdict(state.weights))
    write_config(effective, out / "config.ini")


def choose_ref_chars(corpus, font: str, n: int, seed: int) -> list[str]:
    rng = np.random.default_rng(seed)
    chars = list(corpus.chars)
    if n > len(chars):
        raise ValueError(f"font {font} has only {len(chars)} characters")
    return [chars[i] for i in sorted(rng.choice(len(chars), size=n, replace=False))]


def _cmd_train(args) -> int:
    from .data import import_corpus
    from .losses import PerceptualExtractor
    from .training import TrainState, finetune_agis, pretrain_agis, train_emd

    resolved = resolve_config(args.config, _overrides(args))
    corpus = import_corpus(args.data)
    out = _output_dir(args, f"train-{args.train_cmd}")
    ckpt_dir = out / "checkpoints" if args.save_every_epoch else None
    extractor = PerceptualExtractor.load(args.extractor) if args.extractor else PerceptualExtractor()

    if args.train_cmd == "agis-pretrain":
        config = _model_config(resolved, "agis", len(corpus.train_fonts))
        schedule = _schedule(resolved, "agis_pretrain", config)
        state = TrainState.load(args.resume) if args.resume else None
        state = pretrain_agis(corpus, config, schedule, _weights(resolved), extractor, state=state,
                              checkpoint_dir=ckpt_dir)
    elif args.train_cmd == "emd":
        config = _model_config(resolved, "emd", len(corpus.train_fonts))
        schedule = _schedule(resolved, "emd_train", config)
        state = TrainState.load(args.resume) if args.resume else None
        loss = resolved.get("loss", {})
        state = train_emd(corpus, config, schedule, _weights(resolved), state=state, checkpoint_dir=ckpt_dir,
                          black_threshold=loss.get("black_threshold", 0.5),
                          mean_mode=loss.get("ink_mean_mode", "all"))
    else:
        if not args.checkpoint:
            raise UsageError("train agis-finetune requires --checkpoint")
        base = TrainState.load(args.checkpoint)
        font = args.font or corpus.eval_fonts[0]
        if font not in corpus.fonts:
            raise KeyError(f"font {font!r} not in corpus")
        n = args.refs
        ref_chars = args.ref_chars.split(",") if args.ref_chars else choose_ref_chars(corpus, font, n, args.seed or 0)
        refs = corpus.reference_set(font, ref_chars, allowed_counts=None)
        schedule_kw = dict(resolved.get("schedule", {}))
        from .training import TrainSchedule
        schedule = TrainSchedule.defaults("agis_finetune", m=base.config.m, n=refs.n, **schedule_kw)
        state = finetune_agis(base, corpus, refs, schedule, extractor, checkpoint_dir=ckpt_dir)
    _finish_training(state, out, resolved)
    return EXIT_OK


def _cmd_generate(args) -> int:
    from .data import import_corpus, write_png
    from .training import TrainState, generate

    corpus = import_corpus(args.data)
    state = TrainState.load(args.checkpoint)
    out = _output_dir(args, "generate")
    font = args.font or state.context.get("target_font") or corpus.eval_fonts[0]
    if font not in corpus.fonts:
        raise KeyError(f"font {font!r} not in corpus")
    if args.ref_chars:
        ref_chars = args.ref_chars.split(",")
    elif state.context.get("target_font") == font:
        ref_chars = state.context["ref_chars"]
    else:
        ref_chars = choose_ref_chars(corpus, font, args.refs, args.seed)
    refs = corpus.reference_set(font, ref_chars, allowed_counts=None)
    chars = args.chars.split(",") if args.chars else [c for c in corpus.chars if c not in ref_chars]
    images = generate(state, corpus, chars, refs)
    (out / font).mkdir(parents=True, exist_ok=True)
    for img in images:
        write_png(img.pixels, out / font / f"{img.char_id}.png")
    gen = {font: {g.char_id: g.pixels for g in images}}
    truth = {font: {c: corpus.glyphs[(font, c)].pixels for c in chars}}
    emit_comparison_grid(gen, truth, {font: [g.pixels for g in refs.images]}, out / "comparison.png", chars)
    (out / "references.json").write_text(json.dumps({font: list(ref_chars)}, indent=2) + "\n")
    return EXIT_OK


def _cmd_eval(args) -> int:
    from .losses import PerceptualExtractor
    from .metrics import evaluate_font_set, torch_feature_fn

    out = _output_dir(args, f"eval-{args.eval_cmd}")
    if args.eval_cmd == "images":
        generated = read_glyph_tree(args.generated)
        truth = read_glyph_tree(args.truth, fonts=list(generated))
        if not generated:
            raise FileNotFoundError(f"no generated glyphs under {args.generated}")
        extractor = PerceptualExtractor.load(args.extractor) if args.extractor else PerceptualExtractor()
        report = evaluate_font_set(generated, truth, torch_feature_fn(extractor),
                                   metadata={"extractor": extractor.provenance})
        report.write(out)
        return EXIT_OK

    from .data import import_corpus
    from .embedding import best_nmi_over_restarts, extract_style_embeddings, recall_at_k, write_embeddings
    from .training import TrainState

    corpus = import_corpus(args.data)
    state = TrainState.load(args.checkpoint)
    fonts = args.fonts.split(",") if args.fonts else list(corpus.eval_fonts)
    emb = extract_style_embeddings(state.bundle, corpus, fonts, min(args.glyphs, len(corpus.chars)))
    result = {
        "N": emb.n,
        "recall@1": recall_at_k(emb, 1),
        "recall@2": recall_at_k(emb, 2),
        "nmi_best": best_nmi_over_restarts(emb, len(fonts), args.restarts, seed=args.seed),
        "restarts": args.restarts,
        "seed": args.seed,
    }
    (out / "embedding_metrics.json").write_text(json.dumps(result, indent=2, sort_keys=True) + "\n")
    write_embeddings(emb, out / "embeddings.txt")
    return EXIT_OK


def _cmd_project(args) -> int:
    from .embedding import project_2d, read_embeddings, write_projection_csv

    emb = read_embeddings(args.embeddings)
    out = _output_dir(args, "project")
    params = {"seed": args.seed, "perplexity": args.perplexity} if args.method == "tsne" else {}
    coords = project_2d(emb, args.method, **params)
    write_projection_csv(emb, coords, out / f"projection_{args.method}.csv")
    return EXIT_OK


# --- parser --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="fontdml", description="Few-shot font generation with metric-learned style encoders.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("-o", "--output", help=f"output directory (default ${OUTPUT_ROOT_ENV}/<command>)")

    ds = sub.add_parser("dataset", help="build or import a glyph corpus")
    dsub = ds.add_subparsers(dest="dataset_cmd", required=True, parser_class=_Parser)
    synth = dsub.add_parser("synth", help="procedural synthetic corpus")
    synth.add_argument("--fonts", type=int, default=26)
    synth.add_argument("--chars", type=int, default=50)
    synth.add_argument("--eval-fonts", type=int, default=None)
    synth.add_argument("--val-chars", type=int, default=None)
    synth.add_argument("--seed", type=int, default=0)
    common(synth)
    imp = dsub.add_parser("import", help="validate and copy a PNG corpus")
    imp.add_argument("--root", required=True)
    imp.add_argument("--manifest", default=None)
    common(imp)

    tr = sub.add_parser("train", help="train a backbone")
    tsub = tr.add_subparsers(dest="train_cmd", required=True, parser_class=_Parser)
    for name in ("agis-pretrain", "agis-finetune", "emd"):
        t = tsub.add_parser(name)
        t.add_argument("--data", required=True, help="corpus directory with manifest.json")
        t.add_argument("--config", default=None)
        t.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE")
        t.add_argument("--seed", type=int)
        t.add_argument("--epochs", type=int)
        t.add_argument("--lr", type=float)
        t.add_argument("--batch-size", type=int)
        t.add_argument("--lambda-dml", type=float)
        t.add_argument("--tau", type=float)
        t.add_argument("--embed-dim", type=int)
        t.add_argument("--extractor", default=None, help="perceptual extractor weights archive")
        t.add_argument("--save-every-epoch", action="store_true")
        if name == "agis-finetune":
            t.add_argument("--checkpoint", required=True)
            t.add_argument("--font", default=None)
            t.add_argument("--refs", type=int, default=5, help="number of reference glyphs n")
            t.add_argument("--ref-chars", default=None, help="comma-separated reference characters")
        else:
            t.add_argument("--m", type=int)
            t.add_argument("--n", type=int)
            t.add_argument("--resume", default=None)
        common(t)

    g = sub.add_parser("generate", help="generate glyphs for one font")
    g.add_argument("--data", required=True)
    g.add_argument("--checkpoint", required=True)
    g.add_argument("--font", default=None)
    g.add_argument("--refs", type=int, default=5)
    g.add_argument("--ref-chars", default=None)
    g.add_argument("--chars", default=None)
    g.add_argument("--seed", type=int, default=0)
    common(g)

    ev = sub.add_parser("eval", help="evaluate images or embeddings")
    esub = ev.add_subparsers(dest="eval_cmd", required=True, parser_class=_Parser)
    ei = esub.add_parser("images")
    ei.add_argument("--generated", required=True)
    ei.add_argument("--truth", required=True)
    ei.add_argument("--extractor", default=None)
    common(ei)
    ee = esub.add_parser("embeddings")
    ee.add_argument("--data", required=True)
    ee.add_argument("--checkpoint", required=True)
    ee.add_argument("--fonts", default=None)
    ee.add_argument("--glyphs", type=int, default=30)
    ee.add_argument("--restarts", type=int, default=100)
    ee.add_argument("--seed", type=int, default=0)
    common(ee)

    pr = sub.add_parser("project", help="2-D projection of an embedding dump")
    pr.add_argument("--embeddings", required=True)
    pr.add_argument("--method", choices=("pca", "tsne"), default="tsne")
    pr.add_argument("--perplexity", type=float, default=30.0)
    pr.add_argument("--seed", type=int, default=0)
    common(pr)
    return p


COMMANDS = {"dataset": _cmd_dataset, "train": _cmd_train, "generate": _cmd_generate,
            "eval": _cmd_eval, "project": _cmd_project}


def run(argv: Sequence[str] | None = None) -> int:
    from .data import CorpusError
    from .models import ShapeError
    from .training import NumericalError

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError) as exc:
        print(f"fontdml: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"fontdml: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (CorpusError, KeyError, FileNotFoundError, ShapeError) as exc:
        print(f"fontdml: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"fontdml: {exc}", file=sys.stderr)
        return EXIT_USAGE


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
