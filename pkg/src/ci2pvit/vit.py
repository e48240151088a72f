"""Transformer backbone and the three classifier variants.

* ``vit_b16``: 16x16 patchify + linear embedding.
* ``ci2p_vit``: CI2P embedding (frozen codec encoder + PatchReshape).
* ``ci2p_vit_ds``: raw codec latent tokens for the first ``ds_split``
  blocks at ``ds_early_dim``, then CnnReshape to ``dim`` for the rest.

All variants use pre-norm blocks, learned 1-D positional embeddings
(optional), a final LayerNorm, global average pooling and a linear head.
No class token, no dropout.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from .ci2p import (CI2P_DOWNSAMPLE, InvertedResidual, TokenSequence, cnn_reshape, flatten,
                   frozen_latent, patch_reshape)
from .codec import DOWNSAMPLE as CODEC_DOWNSAMPLE
from .codec import CodecModel
from .core import functional as F
from .core.functional import cross_entropy  # noqa: F401  (re-exported classification loss)
from .core.params import ParamStore, ones, trunc_normal, zeros
from .core.rng import Rng
from .core.tensor import Tensor, swapaxes
from .errors import ConfigError, DimensionError

VARIANTS = ("vit_b16", "ci2p_vit", "ci2p_vit_ds")


@dataclass
class ModelDesc:
    """Declarative architecture description shared by the builder and the FLOPs model."""

    variant: str = "vit_b16"
    image_size: int = 256
    depth: int = 12
    dim: int = 768
    heads: int = 12
    mlp_hidden: int = 3072
    ds_early_dim: int = 192
    ds_split: int = 6
    ds_early_heads: int = 3
    ds_early_mlp: int = 768
    num_classes: int = 1000
    use_pos_embed: bool = True
    patch_size: int = 16
    codec_hidden: int = 128
    codec_latent: int = 192
    expansion: int = 4

    def validate(self) -> "ModelDesc":
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant '{self.variant}', expected one of {VARIANTS}")
        for f in fields(self):
            v = getattr(self, f.name)
            if f.type == "int" and (not isinstance(v, (int, np.integer)) or v < 1):
                raise ConfigError(f"{f.name} must be a positive integer, got {v!r}")
        if self.dim % self.heads:
            raise ConfigError(f"dim {self.dim} is not divisible by heads {self.heads}")
        if self.num_classes < 2:
            raise ConfigError("num_classes must be at least 2")
        if self.image_size % self.embed_stride:
            raise ConfigError(f"image_size {self.image_size} must be a multiple of "
                              f"{self.embed_stride} for {self.variant}")
        if self.variant == "ci2p_vit_ds":
            if not 0 < self.ds_split < self.depth:
                raise ConfigError(f"ds_split must lie in (0, depth), got {self.ds_split}")
            if self.ds_early_dim % self.ds_early_heads:
                raise ConfigError(f"ds_early_dim {self.ds_early_dim} not divisible by "
                                  f"ds_early_heads {self.ds_early_heads}")
            if self.ds_early_dim != self.codec_latent:
                raise ConfigError("ci2p_vit_ds tokenizes the raw latent: ds_early_dim must equal "
                                  f"codec_latent ({self.ds_early_dim} != {self.codec_latent})")
        return self

    @property
    def embed_stride(self) -> int:
        return self.patch_size if self.variant == "vit_b16" else CI2P_DOWNSAMPLE

    def token_counts(self, image_size: int | None = None) -> list[int]:
        """Tokens entering each attention stage (one entry, or two for ds)."""
        s = image_size or self.image_size
        if self.variant == "vit_b16":
            return [(s // self.patch_size) ** 2]
        if self.variant == "ci2p_vit":
            return [(s // CI2P_DOWNSAMPLE) ** 2]
        return [(s // CODEC_DOWNSAMPLE) ** 2, (s // CI2P_DOWNSAMPLE) ** 2]

    def to_config(self) -> str:
        lines = []
        for k, v in asdict(self).items():
            lines.append(f"{k}={str(v).lower() if isinstance(v, bool) else v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_mapping(cls, values: dict) -> "ModelDesc":
        kwargs = {}
        known = {f.name: f.type for f in fields(cls)}
        for k, v in values.items():
            if k not in known:
                continue
            kwargs[k] = _coerce(k, v, known[k])
        return cls(**kwargs)


def _coerce(key: str, value, typ: str):
    if not isinstance(value, str):
        return value
    try:
        if typ == "int":
            return int(value)
        if typ == "bool":
            if value.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(value)
            return value.lower() in ("true", "1", "yes")
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {value!r}") from exc
    return value


# -- layers -----------------------------------------------------------------

class Linear:
    def __init__(self, store: ParamStore, prefix: str, d_in: int, d_out: int, rng: Rng):
        self.weight = store.add(f"{prefix}.weight", trunc_normal(rng, (d_in, d_out)))
        self.bias = store.add(f"{prefix}.bias", zeros(d_out))

    def __call__(self, x: Tensor) -> Tensor:
        return linear(x, self.weight, self.bias)


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine map over the last axis; leading axes are folded into one GEMM."""
    if x.ndim == 2:
        return x @ weight + bias
    lead = x.shape[:-1]
    y = x.reshape(-1, x.shape[-1]) @ weight + bias
    return y.reshape(*lead, weight.shape[1])


class LayerNorm:
    def __init__(self, store: ParamStore, prefix: str, dim: int, eps: float = 1e-6):
        self.gamma = store.add(f"{prefix}.gamma", ones(dim))
        self.beta = store.add(f"{prefix}.beta", zeros(dim))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return F.layernorm(x, self.gamma, self.beta, self.eps)


def msa_forward(tokens: Tensor, heads: int, params: dict[str, Tensor]) -> Tensor:
    """Multi-head scaled dot-product self-attention over ``[N, D]`` (or ``[B, N, D]``).

    ``params`` holds ``qkv.weight [D, 3D]``, ``qkv.bias``, ``proj.weight [D, D]``
    and ``proj.bias``; the qkv output is laid out as (q | k | v), each split
    into ``heads`` contiguous slices.
    """
    single = tokens.ndim == 2
    x = tokens.reshape(1, *tokens.shape) if single else tokens
    b, n, d = x.shape
    if d % heads:
        raise ConfigError(f"token width {d} is not divisible by {heads} heads")
    hd = d // heads
    qkv = linear(x, params["qkv.weight"], params["qkv.bias"])
    qkv = qkv.reshape(b, n, 3, heads, hd).transpose(2, 0, 3, 1, 4)
    q, k, v = qkv[0], qkv[1], qkv[2]
    att = F.softmax((q @ swapaxes(k, -1, -2)) * (1.0 / math.sqrt(hd)))
    o = (att @ v).transpose(0, 2, 1, 3).reshape(b, n, d)
    out = linear(o, params["proj.weight"], params["proj.bias"])
    return out.reshape(n, d) if single else out


class Attention:
    def __init__(self, store: ParamStore, prefix: str, dim: int, heads: int, rng: Rng):
        self.heads = heads
        self.qkv = Linear(store, f"{prefix}.qkv", dim, 3 * dim, rng)
        self.proj = Linear(store, f"{prefix}.proj", dim, dim, rng)

    @property
    def params(self) -> dict[str, Tensor]:
        return {"qkv.weight": self.qkv.weight, "qkv.bias": self.qkv.bias,
                "proj.weight": self.proj.weight, "proj.bias": self.proj.bias}

    def __call__(self, x: Tensor) -> Tensor:
        return msa_forward(x, self.heads, self.params)


class TransformerBlock:
    """x + MSA(LN(x)), then x + MLP(LN(x)) with a gelu hidden layer."""

    def __init__(self, store: ParamStore, prefix: str, dim: int, heads: int, hidden: int, rng: Rng):
        self.norm1 = LayerNorm(store, f"{prefix}.norm1", dim)
        self.attn = Attention(store, f"{prefix}.attn", dim, heads, rng)
        self.norm2 = LayerNorm(store, f"{prefix}.norm2", dim)
        self.fc1 = Linear(store, f"{prefix}.mlp.fc1", dim, hidden, rng)
        self.fc2 = Linear(store, f"{prefix}.mlp.fc2", hidden, dim, rng)

    def __call__(self, x: Tensor) -> Tensor:
        x = x + self.attn(self.norm1(x))
        return x + self.fc2(F.gelu(self.fc1(self.norm2(x))))


# -- classifier -------------------------------------------------------------

class VisionClassifier:
    """One of the three variants, with parameters registered in ``self.store``."""

    def __init__(self, desc: ModelDesc, codec: CodecModel | None = None, seed: int = 0):
        self.desc = desc = desc.validate()
        if desc.variant != "vit_b16":
            if codec is None:
                raise ConfigError(f"{desc.variant} needs a codec")
            if (codec.N, codec.M) != (desc.codec_hidden, desc.codec_latent):
                raise ConfigError(f"codec widths N={codec.N}, M={codec.M} do not match desc "
                                  f"codec_hidden={desc.codec_hidden}, codec_latent={desc.codec_latent}")
        self.codec = codec if desc.variant != "vit_b16" else None
        rng = Rng(seed)
        self.store = store = ParamStore()
        if self.codec is not None:
            self.codec.freeze_encoder()
            for name in self.codec.encoder_names():
                store.add(f"codec.{name}", self.codec.store[name], frozen=True)

        counts = desc.token_counts()
        if desc.variant == "vit_b16":
            p = desc.patch_size
            self.patch_embed = Linear(store, "patch_embed", 3 * p * p, desc.dim, rng)
        elif desc.variant == "ci2p_vit":
            self.patch_reshape = InvertedResidual(store, "patch_reshape", desc.codec_latent, desc.dim,
                                                  rng, stride=2, expansion=desc.expansion)
        self.pos_embed = (store.add("pos_embed", trunc_normal(rng, (counts[0], self._stage_dims()[0])))
                          if desc.use_pos_embed else None)
        self.blocks: list[TransformerBlock] = []
        if desc.variant == "ci2p_vit_ds":
            for i in range(desc.ds_split):
                self.blocks.append(TransformerBlock(store, f"blocks.{i}", desc.ds_early_dim,
                                                    desc.ds_early_heads, desc.ds_early_mlp, rng))
            self.cnn_reshape = InvertedResidual(store, "cnn_reshape", desc.ds_early_dim, desc.dim,
                                                rng, stride=2, expansion=desc.expansion)
            self.pos_embed2 = (store.add("pos_embed2", trunc_normal(rng, (counts[1], desc.dim)))
                               if desc.use_pos_embed else None)
            start = desc.ds_split
        else:
            start = 0
        for i in range(start, desc.depth):
            self.blocks.append(TransformerBlock(store, f"blocks.{i}", desc.dim, desc.heads,
                                                desc.mlp_hidden, rng))
        self.norm = LayerNorm(store, "norm", desc.dim)
        self.head = Linear(store, "head", desc.dim, desc.num_classes, rng)

    def _stage_dims(self) -> list[int]:
        d = self.desc
        return [d.ds_early_dim, d.dim] if d.variant == "ci2p_vit_ds" else [d.dim]

    # -- staged forward ---------------------------------------------------
    def latent(self, x: Tensor) -> Tensor:
        """Frozen codec latent of an image batch (ci2p variants only)."""
        return frozen_latent(self.codec, x)

    def embed(self, x: Tensor) -> TokenSequence:
        """Image batch ``[B,3,H,W]`` -> token sequence entering the first block (no pos-embed)."""
        d = self.desc
        if d.variant == "vit_b16":
            return self._patchify(x)
        return self.embed_latent(self.latent(x))

    def embed_latent(self, y: Tensor) -> TokenSequence:
        if self.desc.variant == "ci2p_vit":
            return flatten(patch_reshape(y, self.patch_reshape))
        return flatten(y)

    def _patchify(self, x: Tensor) -> TokenSequence:
        p = self.desc.patch_size
        b, c, h, w = x.shape
        rows, cols = h // p, w // p
        patches = (x.reshape(b, c, rows, p, cols, p).transpose(0, 2, 4, 1, 3, 5)
                   .reshape(b, rows * cols, c * p * p))
        return TokenSequence(self.patch_embed(patches), (rows, cols))

    def forward_tokens(self, seq: TokenSequence) -> Tensor:
        """Blocks -> norm -> GAP -> head, starting from embedded tokens ``[B, N, D]``."""
        d = self.desc
        x = seq.tokens
        if self.pos_embed is not None:
            x = x + self.pos_embed
        if d.variant == "ci2p_vit_ds":
            for blk in self.blocks[:d.ds_split]:
                x = blk(x)
            x = cnn_reshape(TokenSequence(x, seq.grid), self.cnn_reshape).tokens
            if self.pos_embed2 is not None:
                x = x + self.pos_embed2
            rest = self.blocks[d.ds_split:]
        else:
            rest = self.blocks
        for blk in rest:
            x = blk(x)
        return self.head(self.norm(x).mean(axis=1))

    def forward_latent(self, y: Tensor) -> Tensor:
        return self.forward_tokens(self.embed_latent(y))

    def __call__(self, x: Tensor) -> Tensor:
        return forward_classify(self, x)


def build_model(desc: ModelDesc, codec: CodecModel | None = None,
                seed: int = 0) -> tuple[VisionClassifier, ParamStore]:
    model = VisionClassifier(desc, codec, seed)
    return model, model.store


def forward_classify(model: VisionClassifier, x: Tensor) -> Tensor:
    """Logits ``[num_classes]`` for ``[3,H,W]``, or ``[B, num_classes]`` for a batch."""
    s = model.desc.image_size
    if x.ndim not in (3, 4) or x.shape[-3] != 3 or x.shape[-2:] != (s, s):
        raise DimensionError(f"expected image of shape [3,{s},{s}] (optionally batched), got {x.shape}")
    single = x.ndim == 3
    xb = x.reshape(1, *x.shape) if single else x
    logits = model.forward_tokens(model.embed(xb))
    return logits.reshape(model.desc.num_classes) if single else logits
