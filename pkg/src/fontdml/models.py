"""Generator, discriminators and DML head for the AGIS-style and EMD-style backbones.

Both variants share the same building blocks: a stride-2 convolutional encoder that
reduces a 64x64 input to a 1x1 embedding while exposing its feature pyramid, and a
decoder that mirrors it with skip connections from the content encoder. AGIS mixes
content and style codes by concatenation, EMD through a bilinear tensor.
"""

from __future__ import annotations

import io
import json
import math
import zipfile
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np
import torch
from torch import nn

CHECKPOINT_FORMAT_VERSION = 1
NORM_EPS = 1e-12


class ShapeError(ValueError):
    pass


@dataclass
class ModelConfig:
    variant: str = "agis"
    embed_dim: int = 64
    emd_r: int = 64
    emd_b: int = 64
    emd_k: int = 64
    m: int = 4
    n: int = 5
    channels: tuple[int, ...] = (16, 32, 64, 64, 64)
    image_size: int = 64
    patch_size: int = 16
    num_classes: int = 2
    tau: float = 0.5

    def __post_init__(self):
        self.channels = tuple(int(c) for c in self.channels)
        if self.variant not in ("agis", "emd"):
            raise ValueError(f"unknown variant {self.variant!r}")
        dims = (self.embed_dim, self.emd_r, self.emd_b, self.emd_k, self.m, self.n,
                self.image_size, self.patch_size, self.num_classes, *self.channels)
        if any(d <= 0 for d in dims):
            raise ValueError("all model dimensions must be positive")
        if self.image_size & (self.image_size - 1):
            raise ValueError("image_size must be a power of two")
        if len(self.channels) + 1 != self.stages:
            raise ValueError(f"need {self.stages - 1} intermediate channel widths for a "
                             f"{self.image_size}px input, got {len(self.channels)}")
        if self.tau <= 0:
            raise ValueError("tau must be positive")

    @property
    def stages(self) -> int:
        return int(math.log2(self.image_size))

    @property
    def content_in(self) -> int:
        return 1 if self.variant == "agis" else self.n

    @property
    def style_in(self) -> int:
        return self.m if self.variant == "agis" else self.n

    @property
    def content_dim(self) -> int:
        return self.embed_dim if self.variant == "agis" else self.emd_b

    @property
    def style_dim(self) -> int:
        return self.embed_dim if self.variant == "agis" else self.emd_r

    @property
    def code_dim(self) -> int:
        return 2 * self.embed_dim if self.variant == "agis" else self.emd_k

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channels"] = list(self.channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


def _groups(ch: int) -> int:
    for g in (8, 4, 2):
        if ch % g == 0 and ch // g >= 2:
            return g
    return 1


class Encoder(nn.Module):
    """Stride-2 conv stack; returns the per-stage feature maps (finest first)."""

    def __init__(self, in_channels: int, out_dim: int, channels: tuple[int, ...]):
        super().__init__()
        self.in_channels = in_channels
        widths = list(channels) + [out_dim]
        blocks, prev = [], in_channels
        for i, w in enumerate(widths):
            last = i == len(widths) - 1
            # 2x2 -> 1x1 uses a 2x2 kernel so no tap only ever sees padding
            layers = [nn.Conv2d(prev, w, 2, 2, 0) if last else nn.Conv2d(prev, w, 4, 2, 1)]
            if not last:
                layers += [nn.GroupNorm(_groups(w), w), nn.LeakyReLU(0.2)]
            blocks.append(nn.Sequential(*layers))
            prev = w
        self.blocks = nn.ModuleList(blocks)

    def forward(self, x: torch.Tensor) -> list[torch.Tensor]:
        if x.dim() != 4 or x.shape[1] != self.in_channels:
            raise ShapeError(f"encoder expects (N, {self.in_channels}, H, W), got {tuple(x.shape)}")
        if x.shape[-1] != 2 ** len(self.blocks) or x.shape[-2] != x.shape[-1]:
            raise ShapeError(f"encoder expects {2 ** len(self.blocks)}px square input, got {tuple(x.shape[-2:])}")
        feats = []
        for block in self.blocks:
            x = block(x)
            feats.append(x)
        return feats


class Decoder(nn.Module):
    """Mirror of :class:`Encoder`; code injected at the 1x1 bottleneck, content skips above it."""

    def __init__(self, code_dim: int, channels: tuple[int, ...]):
        super().__init__()
        self.code_dim = code_dim
        skip = list(reversed(channels))  # widths of content levels 2px .. image_size/2 px
        outs = skip[1:] + [max(channels[0] // 2, 8)]
        blocks, prev = [], code_dim
        for i, w in enumerate(skip):
            up = nn.ConvTranspose2d(prev, w, 2, 2, 0) if i == 0 else nn.ConvTranspose2d(prev, w, 4, 2, 1)
            blocks.append(nn.Sequential(up, nn.GroupNorm(_groups(w), w), nn.ReLU()))
            prev = w + w  # concatenated with the matching content level
        self.blocks = nn.ModuleList(blocks)
        self.head = nn.Sequential(nn.ConvTranspose2d(prev, outs[-1], 4, 2, 1), nn.ReLU(),
                                  nn.Conv2d(outs[-1], 1, 3, 1, 1))

    def forward(self, code: torch.Tensor, skips: list[torch.Tensor]) -> torch.Tensor:
        if code.dim() != 2 or code.shape[1] != self.code_dim:
            raise ShapeError(f"decoder expects code of shape (N, {self.code_dim}), got {tuple(code.shape)}")
        x = code[:, :, None, None]
        # skips: content pyramid without its final 1x1 level, coarsest used first
        for block, s in zip(self.blocks, reversed(skips[:-1])):
            x = torch.cat([block(x), s], dim=1)
        return torch.sigmoid(self.head(x))


class BilinearMixer(nn.Module):
    def __init__(self, k: int, r: int, b: int):
        super().__init__()
        self.weight = nn.Parameter(torch.randn(k, r, b) / math.sqrt(r * b))

    def forward(self, style: torch.Tensor, content: torch.Tensor) -> torch.Tensor:
        return mix_emd(style, content, self.weight)


class ConcatMixer(nn.Module):
    def forward(self, style: torch.Tensor, content: torch.Tensor) -> torch.Tensor:
        return mix_agis(content, style)


class Discriminator(nn.Module):
    """Conv critic producing one probability per input image."""

    def __init__(self, size: int, width: int = 16, min_size: int = 4):
        super().__init__()
        self.size = size
        layers, prev, s = [], 1, size
        while s > min_size:
            layers += [nn.Conv2d(prev, width, 4, 2, 1), nn.LeakyReLU(0.2)]
            prev, s = width, s // 2
            width = min(width * 2, 64)
        self.features = nn.Sequential(*layers)
        self.fc = nn.Linear(prev * s * s, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() != 4 or x.shape[1] != 1 or tuple(x.shape[-2:]) != (self.size, self.size):
            raise ShapeError(f"discriminator expects (N, 1, {self.size}, {self.size}), got {tuple(x.shape)}")
        h = self.features(x * 2.0 - 1.0)
        return torch.sigmoid(self.fc(h.flatten(1))).squeeze(1)


class DMLHead(nn.Module):
    """Fully connected class layer on L2-normalized style embeddings, with temperature."""

    def __init__(self, dim: int, num_classes: int, tau: float):
        super().__init__()
        if tau <= 0:
            raise ValueError("tau must be positive")
        self.weight = nn.Parameter(torch.randn(dim, num_classes) / math.sqrt(dim))
        self.bias = nn.Parameter(torch.zeros(num_classes))
        self.tau = float(tau)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return dml_logits(x, self.weight, self.bias, self.tau)


class ModelBundle(nn.Module):
    """All learnable parameters of one backbone. EMD has no discriminators."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        c = config
        self.content_encoder = Encoder(c.content_in, c.content_dim, c.channels)
        self.style_encoder = Encoder(c.style_in, c.style_dim, c.channels)
        self.mixer = ConcatMixer() if c.variant == "agis" else BilinearMixer(c.emd_k, c.emd_r, c.emd_b)
        self.decoder = Decoder(c.code_dim, c.channels)
        if c.variant == "agis":
            self.tex_discriminator = Discriminator(c.image_size)
            self.local_discriminator = Discriminator(c.patch_size)
        else:
            self.tex_discriminator = None
            self.local_discriminator = None
        self.dml_head = DMLHead(c.style_dim, c.num_classes, c.tau)

    def generator_parameters(self):
        for mod in (self.content_encoder, self.style_encoder, self.mixer, self.decoder):
            yield from mod.parameters()

    def discriminator_parameters(self):
        for mod in (self.tex_discriminator, self.local_discriminator):
            if mod is not None:
                yield from mod.parameters()

    def encode_content(self, images: torch.Tensor):
        return encode_content(self, images)

    def encode_style(self, images: torch.Tensor):
        return encode_style(self, images)

    def generate(self, content: torch.Tensor, style: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Return ``(images, raw style embedding)`` for glyph batches in [0, 1]."""
        pyramid, content_emb = encode_content(self, content)
        style_emb = encode_style(self, style)
        code = self.mixer(style_emb, content_emb)
        return decode(self, code, pyramid), style_emb


# --- functional surface ------------------------------------------------------

def to_signed(images: torch.Tensor) -> torch.Tensor:
    """Map [0, 1] glyph pixels to the [-1, 1] range the networks consume."""
    return images * 2.0 - 1.0


def encode_content(bundle: ModelBundle, images: torch.Tensor) -> tuple[list[torch.Tensor], torch.Tensor]:
    feats = bundle.content_encoder(to_signed(images))
    return feats, feats[-1].flatten(1)


def encode_style(bundle: ModelBundle, images: torch.Tensor) -> torch.Tensor:
    return bundle.style_encoder(to_signed(images))[-1].flatten(1)


def normalize_embedding(e: torch.Tensor, eps: float = NORM_EPS) -> torch.Tensor:
    """L2-normalize along the last axis; ``eps`` is added to the norm so zero input stays finite."""
    return e / (torch.linalg.vector_norm(e, dim=-1, keepdim=True) + eps)


def mix_agis(content_emb: torch.Tensor, style_emb: torch.Tensor) -> torch.Tensor:
    return torch.cat([content_emb, style_emb], dim=-1)


def mix_emd(style: torch.Tensor, content: torch.Tensor, weight: torch.Tensor) -> torch.Tensor:
    """``out[k] = sum_{r,b} weight[k, r, b] * style[r] * content[b]`` (batched over leading dims)."""
    k, r, b = weight.shape
    if style.shape[-1] != r or content.shape[-1] != b:
        raise ShapeError(f"bilinear mixer expects style dim {r} and content dim {b}, "
                         f"got {style.shape[-1]} and {content.shape[-1]}")
    return torch.einsum("krb,...r,...b->...k", weight, style, content)


def decode(bundle: ModelBundle, code: torch.Tensor, pyramid: list[torch.Tensor]) -> torch.Tensor:
    return bundle.decoder(code, pyramid)


def discriminate_tex(bundle: ModelBundle, images: torch.Tensor) -> torch.Tensor:
    return bundle.tex_discriminator(images)


def discriminate_local(bundle: ModelBundle, patches: torch.Tensor) -> torch.Tensor:
    return bundle.local_discriminator(patches)


def dml_logits(x: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor, tau: float) -> torch.Tensor:
    if tau <= 0:
        raise ValueError("tau must be positive")
    return (x @ weight + bias) / tau


# --- checkpoints -------------------------------------------------------------

def _array_bytes(arr: np.ndarray) -> bytes:
    buf = io.BytesIO()
    np.save(buf, arr, allow_pickle=False)
    return buf.getvalue()


def write_archive(path: str | Path, arrays: dict[str, np.ndarray], manifest: dict) -> None:
    """Zip container: ``manifest.json`` plus one ``.npy`` member per named array."""
    manifest = dict(manifest, format_version=CHECKPOINT_FORMAT_VERSION,
                    arrays={k: {"shape": list(v.shape), "dtype": str(v.dtype)} for k, v in arrays.items()})
    # fixed timestamps keep archives byte-identical across runs
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        info = zipfile.ZipInfo("manifest.json", date_time=(1980, 1, 1, 0, 0, 0))
        zf.writestr(info, json.dumps(manifest, indent=2, sort_keys=True))
        for name, arr in sorted(arrays.items()):
            zf.writestr(zipfile.ZipInfo(f"arrays/{name}.npy", date_time=(1980, 1, 1, 0, 0, 0)),
                        _array_bytes(np.ascontiguousarray(arr)))


def read_archive(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    with zipfile.ZipFile(path) as zf:
        manifest = json.loads(zf.read("manifest.json"))
        if manifest.get("format_version") != CHECKPOINT_FORMAT_VERSION:
            raise ValueError(f"unsupported checkpoint format {manifest.get('format_version')!r}")
        arrays = {name: np.load(io.BytesIO(zf.read(f"arrays/{name}.npy")), allow_pickle=False)
                  for name in manifest["arrays"]}
    return arrays, manifest


def bundle_arrays(bundle: ModelBundle) -> dict[str, np.ndarray]:
    return {k: v.detach().cpu().numpy().copy() for k, v in bundle.state_dict().items()}


def save_bundle(bundle: ModelBundle, path: str | Path, extra: dict | None = None) -> None:
    manifest = {"kind": "model_bundle", "config": bundle.config.to_dict(), "tau": bundle.dml_head.tau}
    if extra:
        manifest.update(extra)
    write_archive(path, bundle_arrays(bundle), manifest)


def bundle_from_arrays(arrays: dict[str, np.ndarray], manifest: dict) -> ModelBundle:
    config = ModelConfig.from_dict(manifest["config"])
    bundle = ModelBundle(config)
    state = {k: torch.from_numpy(arrays[k].copy()) for k in bundle.state_dict()}
    bundle.load_state_dict(state)
    bundle.dml_head.tau = float(manifest.get("tau", config.tau))
    return bundle


def load_bundle(path: str | Path) -> ModelBundle:
    arrays, manifest = read_archive(path)
    return bundle_from_arrays({k: v for k, v in arrays.items() if not k.startswith("opt.")}, manifest)
