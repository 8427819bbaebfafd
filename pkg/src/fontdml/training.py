"""Training loops: AGIS pretraining and few-shot fine-tuning, EMD supervised training.

All randomness after model initialization (epoch shuffles, reference sampling, patch
positions) comes from one ``numpy`` generator stored in :class:`TrainState`, so a run
resumed from a checkpoint continues exactly like an uninterrupted one.
"""

from __future__ import annotations

import copy
import csv
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from .data import GlyphCorpus, GlyphImage, ReferenceSet, content_reference, sample_style_refs
from .losses import (LossWeights, PerceptualExtractor, PixelWeighting, adv_d_tex_loss, adv_g_loss,
                     contextual_loss, dml_loss, emd_weighted_l1, gaussian_blur, l1_loss, local_losses,
                     random_patches,
                     total_g_loss_agis, total_g_loss_emd)
from .models import (ModelBundle, ModelConfig, bundle_arrays, bundle_from_arrays, normalize_embedding,
                     read_archive, write_archive)

logger = logging.getLogger(__name__)

PHASES = ("agis_pretrain", "agis_finetune", "emd_train")
ADAM_BETAS = (0.5, 0.999)
PATCHES_PER_IMAGE = 4
VAL_PAIRS = 32


class NumericalError(RuntimeError):
    """A loss term became NaN or infinite."""


@dataclass
class TrainSchedule:
    phase: str = "agis_pretrain"
    epochs: int = 20
    base_lr: float = 2e-4
    lr_decay: str = "linear_after_half"
    batch_size: int = 8
    seed: int = 0
    m: int = 4
    n: int = 5

    def __post_init__(self):
        if self.phase not in PHASES:
            raise ValueError(f"unknown phase {self.phase!r}")
        if self.lr_decay not in ("none", "linear_after_half"):
            raise ValueError(f"unknown lr_decay {self.lr_decay!r}")
        if self.epochs < 1 or self.batch_size < 1 or self.base_lr <= 0:
            raise ValueError("epochs, batch_size and base_lr must be positive")

    @classmethod
    def defaults(cls, phase: str, **overrides) -> "TrainSchedule":
        base = {
            "agis_pretrain": dict(epochs=20, base_lr=2e-4, lr_decay="linear_after_half"),
            "agis_finetune": dict(epochs=200, base_lr=2e-5, lr_decay="none"),
            "emd_train": dict(epochs=10, base_lr=2e-4, lr_decay="none"),
        }[phase]
        base.update(overrides)
        return cls(phase=phase, **base)

    def lr_at(self, epoch: int) -> float:
        """Constant for the first half, then linear to zero at ``epochs`` (0-based epochs)."""
        if self.lr_decay == "none":
            return self.base_lr
        half = self.epochs // 2
        if epoch < half:
            return self.base_lr
        return self.base_lr * (self.epochs - epoch) / (self.epochs - half)


@dataclass
class TrainState:
    bundle: ModelBundle
    schedule: TrainSchedule
    weights: LossWeights
    opt_g: torch.optim.Optimizer
    opt_d: torch.optim.Optimizer | None
    rng: np.random.Generator
    epoch: int = 0
    step: int = 0
    history: list[dict] = field(default_factory=list)
    lr_log: list[tuple[int, float]] = field(default_factory=list)
    val_history: list[dict] = field(default_factory=list)
    context: dict = field(default_factory=dict)

    @property
    def config(self) -> ModelConfig:
        return self.bundle.config

    def loss_log_rows(self) -> list[tuple[int, str, float]]:
        rows = []
        for rec in self.history:
            for term, value in rec.items():
                if term not in ("step", "epoch"):
                    rows.append((rec["step"], term, value))
        return rows

    def write_loss_log(self, path: str | Path) -> None:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["step", "term", "value"])
        for step, term, value in self.loss_log_rows():
            w.writerow([step, term, repr(float(value))])
        Path(path).write_text(buf.getvalue())

    def write_lr_log(self, path: str | Path) -> None:
        lines = ["epoch,lr"] + [f"{e},{lr!r}" for e, lr in self.lr_log]
        Path(path).write_text("\n".join(lines) + "\n")

    def save(self, path: str | Path) -> None:
        arrays = {f"model.{k}": v for k, v in bundle_arrays(self.bundle).items()}
        opt_meta = {}
        for name, opt in (("opt_g", self.opt_g), ("opt_d", self.opt_d)):
            if opt is None:
                continue
            sd = opt.state_dict()
            slots = {}
            for pid, st in sd["state"].items():
                slots[str(pid)] = {}
                for key, val in st.items():
                    if torch.is_tensor(val) and val.dim() > 0:
                        arrays[f"{name}.{pid}.{key}"] = val.detach().numpy().copy()
                        slots[str(pid)][key] = "array"
                    else:
                        slots[str(pid)][key] = float(val)
            opt_meta[name] = {"param_groups": sd["param_groups"], "state": slots}
        manifest = {
            "kind": "train_state",
            "config": self.config.to_dict(),
            "tau": self.bundle.dml_head.tau,
            "schedule": asdict(self.schedule),
            "weights": asdict(self.weights),
            "optimizers": opt_meta,
            "rng_state": self.rng.bit_generator.state,
            "epoch": self.epoch,
            "step": self.step,
            "history": self.history,
            "lr_log": self.lr_log,
            "val_history": self.val_history,
            "context": self.context,
        }
        write_archive(path, arrays, manifest)

    @classmethod
    def load(cls, path: str | Path) -> "TrainState":
        arrays, manifest = read_archive(path)
        model_arrays = {k[len("model."):]: v for k, v in arrays.items() if k.startswith("model.")}
        bundle = bundle_from_arrays(model_arrays, manifest)
        schedule = TrainSchedule(**manifest["schedule"])
        if schedule.phase == "agis_finetune":
            bundle.dml_head.requires_grad_(False)
        weights = LossWeights(**manifest["weights"])
        opt_g, opt_d = _make_optimizers(bundle, schedule, train_dml=schedule.phase != "agis_finetune")
        for name, opt in (("opt_g", opt_g), ("opt_d", opt_d)):
            meta = manifest["optimizers"].get(name)
            if opt is None or meta is None:
                continue
            state = {}
            for pid, slots in meta["state"].items():
                state[int(pid)] = {key: (torch.from_numpy(arrays[f"{name}.{pid}.{key}"].copy())
                                         if kind == "array" else torch.tensor(kind))
                                   for key, kind in slots.items()}
            opt.load_state_dict({"state": state, "param_groups": meta["param_groups"]})
        rng = np.random.default_rng()
        rng.bit_generator.state = manifest["rng_state"]
        return cls(bundle=bundle, schedule=schedule, weights=weights, opt_g=opt_g, opt_d=opt_d, rng=rng,
                   epoch=manifest["epoch"], step=manifest["step"],
                   history=manifest["history"], lr_log=[tuple(x) for x in manifest["lr_log"]],
                   val_history=manifest["val_history"], context=manifest["context"])


def _make_optimizers(bundle: ModelBundle, schedule: TrainSchedule, train_dml: bool):
    g_params = list(bundle.generator_parameters())
    if train_dml:
        g_params += list(bundle.dml_head.parameters())
    opt_g = torch.optim.Adam(g_params, lr=schedule.base_lr, betas=ADAM_BETAS)
    d_params = list(bundle.discriminator_parameters())
    opt_d = torch.optim.Adam(d_params, lr=schedule.base_lr, betas=ADAM_BETAS) if d_params else None
    return opt_g, opt_d


def new_state(config: ModelConfig, schedule: TrainSchedule, weights: LossWeights | None = None) -> TrainState:
    torch.manual_seed(schedule.seed)
    bundle = ModelBundle(config)
    opt_g, opt_d = _make_optimizers(bundle, schedule, train_dml=True)
    return TrainState(bundle=bundle, schedule=schedule, weights=weights or LossWeights(),
                      opt_g=opt_g, opt_d=opt_d, rng=np.random.default_rng(schedule.seed))


def _stack(images: Sequence) -> torch.Tensor:
    return torch.from_numpy(np.stack([g.pixels if isinstance(g, GlyphImage) else np.asarray(g, np.float32)
                                      for g in images]).astype(np.float32))


def _set_lr(state: TrainState, lr: float) -> None:
    for opt in (state.opt_g, state.opt_d):
        if opt is not None:
            for group in opt.param_groups:
                group["lr"] = lr


def _check_finite(terms: dict) -> None:
    for name, value in terms.items():
        if not math.isfinite(value):
            raise NumericalError(f"loss term {name!r} is {value} ; aborting")


def _grad_norm(params) -> float:
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float(p.grad.detach().pow(2).sum())
    return math.sqrt(total)


# --- AGIS --------------------------------------------------------------------

@dataclass
class AGISBatch:
    content: torch.Tensor        # (B, 1, H, W)
    style: torch.Tensor          # (B, m, H, W)
    target: torch.Tensor         # (B, 1, H, W); rows without ground truth are placeholders
    has_gt: torch.Tensor         # (B,) bool
    labels: torch.Tensor         # (B,) class indices for the DML head (-1 when unused)
    real: torch.Tensor           # (B, 1, H, W) real glyphs of the batch styles for the critics


def agis_step(state: TrainState, batch: AGISBatch, extractor: PerceptualExtractor, mode: str = "pretrain") -> dict:
    """One discriminator update followed by one generator update; returns the logged terms."""
    bundle, w, rng = state.bundle, state.weights, state.rng
    bundle.train()
    fake, style_emb = bundle.generate(batch.content, batch.style)
    b = fake.shape[0]
    patch = bundle.config.patch_size
    p_fake = random_patches(fake, rng, patch, PATCHES_PER_IMAGE)
    p_real = random_patches(batch.real, rng, patch, PATCHES_PER_IMAGE)
    p_blur = gaussian_blur(p_real)

    # discriminators: maximize their objectives
    state.opt_d.zero_grad(set_to_none=True)
    d_tex = adv_d_tex_loss(bundle.tex_discriminator(batch.real), bundle.tex_discriminator(fake.detach()))
    dl = bundle.local_discriminator
    _, d_local = local_losses(dl(p_fake.detach()), dl(p_real), dl(p_blur))
    (-(d_tex + d_local)).backward()
    state.opt_d.step()

    # generator
    state.opt_g.zero_grad(set_to_none=True)
    if bundle.dml_head.weight.grad is not None:
        bundle.dml_head.zero_grad(set_to_none=True)
    comps = {
        "l1": l1_loss(fake, batch.target, reduction="none"),
        "adv": adv_g_loss(bundle.tex_discriminator(fake), reduction="none"),
        "local": adv_g_loss(dl(p_fake), reduction="none").reshape(b, PATCHES_PER_IMAGE).mean(dim=1),
    }
    if mode == "pretrain" or bool(batch.has_gt.any()):
        comps["cx"] = contextual_loss(fake, batch.target, extractor, reduction="none")
    else:
        comps["cx"] = torch.zeros(b)
    if mode == "pretrain" and w.lambda_dml > 0:
        comps["dml"] = dml_loss(bundle.dml_head(normalize_embedding(style_emb)), batch.labels, reduction="none")
    else:
        comps["dml"] = torch.zeros(b)
    total = total_g_loss_agis(comps, w, batch.has_gt, mode)
    total.backward()
    state.opt_g.step()

    comps = {k: v.detach() for k, v in comps.items()}
    mask = batch.has_gt.float()
    denom = max(float(mask.sum()), 1.0) if mode == "finetune" else float(b)
    terms = {
        "g_total": float(total.detach()),
        "l1": float((comps["l1"] * (mask if mode == "finetune" else 1.0)).sum()) / denom,
        "cx": float((comps["cx"] * (mask if mode == "finetune" else 1.0)).sum()) / denom,
        "adv": float(comps["adv"].mean()),
        "local": float(comps["local"].mean()),
        "dml": float(comps["dml"].mean()),
        "d_tex": float(d_tex.detach()),
        "d_local": float(d_local.detach()),
        "dml_head_grad_norm": _grad_norm(bundle.dml_head.parameters()),
    }
    _check_finite(terms)
    return terms


def _agis_pretrain_batch(corpus: GlyphCorpus, pairs, font_index, ref_sets, m, rng) -> AGISBatch:
    content, style, target, real, labels = [], [], [], [], []
    for font, char in pairs:
        refs = sample_style_refs(ref_sets[font], m, rng)
        content.append(content_reference(corpus, char))
        style.append(_stack(refs))
        target.append(corpus.glyphs[(font, char)])
        real.append(refs[0])
        labels.append(font_index[font])
    return AGISBatch(content=_stack(content)[:, None], style=torch.stack(style), target=_stack(target)[:, None],
                     has_gt=torch.ones(len(pairs), dtype=torch.bool), labels=torch.tensor(labels),
                     real=_stack(real)[:, None])


def _train_ref_sets(corpus: GlyphCorpus) -> dict[str, ReferenceSet]:
    return {f: corpus.reference_set(f, corpus.train_chars, allowed_counts=None) for f in corpus.train_fonts}


def _validation_l1(state: TrainState, corpus: GlyphCorpus) -> float:
    """L1 on a fixed subset of (train font, val char) pairs with fixed style references."""
    pairs = [(f, c) for f in corpus.train_fonts for c in corpus.val_chars][:VAL_PAIRS]
    if not pairs:
        return float("nan")
    bundle = state.bundle
    k = bundle.config.style_in
    with torch.no_grad():
        bundle.eval()
        content = _stack([content_reference(corpus, c) for _, c in pairs])[:, None]
        style = torch.stack([_stack([corpus.glyphs[(f, c)] for c in _cycle(corpus.train_chars, k)])
                             for f, _ in pairs])
        target = _stack([corpus.glyphs[p] for p in pairs])[:, None]
        if bundle.config.variant == "agis":
            fake, _ = bundle.generate(content, style)
        else:
            cont = torch.stack([_stack([corpus.glyphs[(g, c)] for g in _cycle(corpus.train_fonts, k)])
                                for _, c in pairs])
            fake, _ = bundle.generate(cont, style)
        bundle.train()
    return float(l1_loss(fake, target))


def _cycle(items: Sequence, k: int) -> list:
    return [items[i % len(items)] for i in range(k)]


def _run_epochs(state: TrainState, epoch_fn: Callable[[int], None], epochs: int | None,
                checkpoint_dir: str | Path | None, corpus: GlyphCorpus | None) -> TrainState:
    stop = state.schedule.epochs if epochs is None else min(state.schedule.epochs, state.epoch + epochs)
    while state.epoch < stop:
        lr = state.schedule.lr_at(state.epoch)
        _set_lr(state, lr)
        state.lr_log.append((state.epoch, lr))
        epoch_fn(lr)
        if corpus is not None and state.schedule.phase != "agis_finetune":
            state.val_history.append({"epoch": state.epoch, "val_l1": _validation_l1(state, corpus)})
        state.epoch += 1
        if checkpoint_dir is not None:
            Path(checkpoint_dir).mkdir(parents=True, exist_ok=True)
            state.save(Path(checkpoint_dir) / f"epoch_{state.epoch:04d}.ckpt")
    return state


def pretrain_agis(corpus: GlyphCorpus, config: ModelConfig, schedule: TrainSchedule,
                  weights: LossWeights | None = None, extractor: PerceptualExtractor | None = None,
                  state: TrainState | None = None, epochs: int | None = None,
                  checkpoint_dir: str | Path | None = None) -> TrainState:
    """Adversarial + supervised pretraining over all (train font, train char) pairs.

    Pass ``state`` to resume; ``epochs`` limits how many epochs this call runs.
    """
    if len(corpus.train_fonts) < 2:
        raise ValueError("pretraining needs at least two training fonts")
    if config.variant != "agis":
        raise ValueError("pretrain_agis needs an agis ModelConfig")
    if config.num_classes != len(corpus.train_fonts):
        raise ValueError(f"num_classes={config.num_classes} but corpus has {len(corpus.train_fonts)} train fonts")
    if schedule.m != config.m:
        raise ValueError("schedule.m and config.m disagree")
    extractor = extractor or PerceptualExtractor()
    state = state or new_state(config, schedule, weights)
    font_index = {f: i for i, f in enumerate(corpus.train_fonts)}
    ref_sets = _train_ref_sets(corpus)
    pairs = [(f, c) for f in corpus.train_fonts for c in corpus.train_chars]

    def epoch_fn(lr):
        order = state.rng.permutation(len(pairs))
        for start in range(0, len(order), state.schedule.batch_size):
            chunk = [pairs[i] for i in order[start:start + state.schedule.batch_size]]
            batch = _agis_pretrain_batch(corpus, chunk, font_index, ref_sets, config.m, state.rng)
            terms = agis_step(state, batch, extractor, "pretrain")
            state.step += 1
            state.history.append({"step": state.step, "epoch": state.epoch, "lr": lr, **terms})

    state.context.setdefault("train_fonts", list(corpus.train_fonts))
    return _run_epochs(state, epoch_fn, epochs, checkpoint_dir, corpus)


def finetune_agis(state: TrainState, corpus: GlyphCorpus, target_refs: ReferenceSet, schedule: TrainSchedule,
                  extractor: PerceptualExtractor | None = None, epochs: int | None = None,
                  checkpoint_dir: str | Path | None = None, char_ids: Sequence[str] | None = None) -> TrainState:
    """Few-shot adaptation to one unseen font from its ``n`` reference glyphs.

    Each epoch visits every character in ``char_ids`` (default: the whole corpus
    alphabet). Pair-wise losses apply only to the reference characters; the metric
    learning head is frozen. Returns a new state; ``state`` is left untouched.
    """
    if target_refs.font_id in corpus.train_fonts:
        raise ValueError(f"font {target_refs.font_id} was seen in pretraining; pick a held-out font")
    for c in target_refs.char_ids:
        if (target_refs.font_id, c) not in corpus.glyphs:
            raise ValueError(f"reference glyph ({target_refs.font_id}, {c}) missing from corpus")
    m = state.config.m
    if target_refs.n < m:
        raise ValueError(f"need at least m={m} reference glyphs, got {target_refs.n}")
    extractor = extractor or PerceptualExtractor()
    bundle = copy.deepcopy(state.bundle)
    bundle.dml_head.requires_grad_(False)
    opt_g, opt_d = _make_optimizers(bundle, schedule, train_dml=False)
    ft = TrainState(bundle=bundle, schedule=schedule, weights=copy.deepcopy(state.weights), opt_g=opt_g,
                    opt_d=opt_d, rng=np.random.default_rng(schedule.seed),
                    context={"target_font": target_refs.font_id, "ref_chars": list(target_refs.char_ids)})
    chars = list(char_ids) if char_ids is not None else list(corpus.chars)
    ref_lookup = dict(zip(target_refs.char_ids, target_refs.images))
    blank = np.ones((corpus.image_size, corpus.image_size), np.float32)

    def epoch_fn(lr):
        order = ft.rng.permutation(len(chars))
        for start in range(0, len(order), ft.schedule.batch_size):
            chunk = [chars[i] for i in order[start:start + ft.schedule.batch_size]]
            style = [_stack(sample_style_refs(target_refs, m, ft.rng)) for _ in chunk]
            real_idx = ft.rng.integers(0, target_refs.n, size=len(chunk))
            batch = AGISBatch(
                content=_stack([content_reference(corpus, c) for c in chunk])[:, None],
                style=torch.stack(style),
                # only reference glyphs are visible; the rest are masked placeholders
                target=_stack([ref_lookup[c] if c in ref_lookup else blank for c in chunk])[:, None],
                has_gt=torch.tensor([c in ref_lookup for c in chunk]),
                labels=torch.full((len(chunk),), -1),
                real=_stack([target_refs.images[i] for i in real_idx])[:, None],
            )
            terms = agis_step(ft, batch, extractor, "finetune")
            ft.step += 1
            ft.history.append({"step": ft.step, "epoch": ft.epoch, "lr": lr, **terms})

    return _run_epochs(ft, epoch_fn, epochs, checkpoint_dir, None)


def reference_l1(state_or_bundle, corpus: GlyphCorpus, refs: ReferenceSet) -> float:
    """Mean L1 between generated and true glyphs for the reference characters themselves."""
    gen = generate(state_or_bundle, corpus, refs.char_ids, refs.images)
    return float(np.mean([np.abs(g.pixels - r.pixels).mean() for g, r in zip(gen, refs.images)]))


# --- EMD ---------------------------------------------------------------------

@dataclass
class EMDBatch:
    content: torch.Tensor   # (B, n, H, W)
    style: torch.Tensor     # (B, n, H, W)
    target: torch.Tensor    # (B, 1, H, W)
    beta: torch.Tensor      # (B,)
    labels: torch.Tensor    # (B,)


def emd_step(state: TrainState, batch: EMDBatch, black_threshold: float = 0.5) -> dict:
    bundle = state.bundle
    bundle.train()
    state.opt_g.zero_grad(set_to_none=True)
    fake, style_emb = bundle.generate(batch.content, batch.style)
    wl1 = emd_weighted_l1(fake, batch.target, batch.beta, black_threshold)
    lam = state.weights.lambda_dml
    dml = dml_loss(bundle.dml_head(normalize_embedding(style_emb)), batch.labels) if lam > 0 else torch.zeros(())
    total = total_g_loss_emd(wl1, dml, lam)
    total.backward()
    state.opt_g.step()
    terms = {"g_total": float(total.detach()), "weighted_l1": float(wl1.detach()), "dml": float(dml.detach()),
             "l1": float(l1_loss(fake.detach(), batch.target))}
    _check_finite(terms)
    return terms


def _emd_batch(corpus: GlyphCorpus, pairs, n, weighting: PixelWeighting, font_index, rng) -> EMDBatch:
    fonts, chars = list(corpus.train_fonts), list(corpus.train_chars)
    content, style = [], []
    for font, char in pairs:
        others = [f for f in fonts if f != font]
        pool = others if len(others) >= n else fonts
        cfonts = [pool[i] for i in rng.choice(len(pool), size=n, replace=len(pool) < n)]
        schars = [chars[i] for i in rng.choice(len(chars), size=n, replace=len(chars) < n)]
        content.append(_stack([corpus.glyphs[(f, char)] for f in cfonts]))
        style.append(_stack([corpus.glyphs[(font, c)] for c in schars]))
    return EMDBatch(content=torch.stack(content), style=torch.stack(style),
                    target=_stack([corpus.glyphs[p] for p in pairs])[:, None],
                    beta=torch.from_numpy(weighting.beta_for(pairs)).float(),
                    labels=torch.tensor([font_index[f] for f, _ in pairs]))


def emd_pixel_weighting(corpus: GlyphCorpus, black_threshold: float = 0.5, mean_mode: str = "all") -> PixelWeighting:
    pairs = [(f, c) for f in corpus.train_fonts for c in corpus.train_chars]
    return PixelWeighting.from_images(pairs, np.stack([corpus.glyphs[p].pixels for p in pairs]),
                                      black_threshold, mean_mode)


def train_emd(corpus: GlyphCorpus, config: ModelConfig, schedule: TrainSchedule,
              weights: LossWeights | None = None, state: TrainState | None = None,
              epochs: int | None = None, checkpoint_dir: str | Path | None = None,
              black_threshold: float = 0.5, mean_mode: str = "all") -> TrainState:
    """One-stage supervised training on the pixel-weighted L1 plus the metric-learning term."""
    if config.variant != "emd":
        raise ValueError("train_emd needs an emd ModelConfig")
    if len(corpus.train_fonts) < 2:
        raise ValueError("EMD training needs at least two training fonts")
    if config.num_classes != len(corpus.train_fonts):
        raise ValueError(f"num_classes={config.num_classes} but corpus has {len(corpus.train_fonts)} train fonts")
    if schedule.n != config.n:
        raise ValueError("schedule.n and config.n disagree")
    state = state or new_state(config, schedule, weights)
    weighting = emd_pixel_weighting(corpus, black_threshold, mean_mode)
    font_index = {f: i for i, f in enumerate(corpus.train_fonts)}
    pairs = [(f, c) for f in corpus.train_fonts for c in corpus.train_chars]

    def epoch_fn(lr):
        order = state.rng.permutation(len(pairs))
        for start in range(0, len(order), state.schedule.batch_size):
            chunk = [pairs[i] for i in order[start:start + state.schedule.batch_size]]
            batch = _emd_batch(corpus, chunk, config.n, weighting, font_index, state.rng)
            terms = emd_step(state, batch, black_threshold)
            state.step += 1
            state.history.append({"step": state.step, "epoch": state.epoch, "lr": lr, **terms})

    state.context.setdefault("train_fonts", list(corpus.train_fonts))
    return _run_epochs(state, epoch_fn, epochs, checkpoint_dir, corpus)


# --- inference ---------------------------------------------------------------

def generate(state_or_bundle, corpus: GlyphCorpus, char_ids: Sequence[str],
             style_refs: Sequence, content_fonts: Sequence[str] | None = None) -> list[GlyphImage]:
    """Generate one glyph per requested character in the style of ``style_refs``.

    AGIS consumes the first ``m`` references (cycled if fewer). EMD consumes the first
    ``n`` references and, as content, each character in ``content_fonts`` (default:
    the first ``n`` training fonts).
    """
    bundle = state_or_bundle.bundle if isinstance(state_or_bundle, TrainState) else state_or_bundle
    cfg = bundle.config
    if not style_refs:
        raise ValueError("no style references given")
    refs = list(style_refs.images if isinstance(style_refs, ReferenceSet) else style_refs)
    font_id = refs[0].font_id if isinstance(refs[0], GlyphImage) else "generated"
    style = _stack(_cycle(refs, cfg.style_in))[None]
    out = []
    bundle.eval()
    with torch.no_grad():
        for char in char_ids:
            if cfg.variant == "agis":
                content = _stack([content_reference(corpus, char)])[:, None]
            else:
                fonts = list(content_fonts) if content_fonts is not None else _cycle(corpus.train_fonts, cfg.n)
                content = _stack([corpus.glyphs[(f, char)] for f in fonts[:cfg.n]])[None]
            img, _ = bundle.generate(content, style)
            out.append(GlyphImage(img[0, 0].clamp(0.0, 1.0).numpy(), font_id, char))
    return out


def history_json(state: TrainState) -> str:
    return json.dumps(state.history, sort_keys=True)
