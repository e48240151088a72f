"""CI2P patch embedding: frozen codec encoder -> inverted residual -> token sequence.

Token order is row-major over the latent grid: token ``r * cols + c``
holds the channel vector at grid position ``(r, c)``.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import codec as codec_mod
from .codec import CodecModel
from .core import functional as F
from .core.params import ParamStore, kaiming_uniform, zeros
from .core.rng import Rng
from .core.tensor import Tensor, no_grad, transpose
from .errors import DimensionError

CI2P_DOWNSAMPLE = 32


class InvertedResidual:
    """1x1 expand -> relu6 -> 3x3 depthwise (stride) -> relu6 -> 1x1 linear project.

    The skip connection exists only when ``stride == 1`` and the channel
    count is unchanged.
    """

    def __init__(self, store: ParamStore, prefix: str, in_channels: int, out_channels: int,
                 rng: Rng, stride: int = 2, expansion: int = 4):
        self.in_channels, self.out_channels = in_channels, out_channels
        self.stride, self.expansion = stride, expansion
        hidden = self.hidden = in_channels * expansion
        self.expand_w = store.add(f"{prefix}.expand.weight",
                                  kaiming_uniform(rng, (hidden, in_channels, 1, 1), in_channels))
        self.expand_b = store.add(f"{prefix}.expand.bias", zeros(hidden))
        self.dw_w = store.add(f"{prefix}.depthwise.weight", kaiming_uniform(rng, (hidden, 1, 3, 3), 9))
        self.dw_b = store.add(f"{prefix}.depthwise.bias", zeros(hidden))
        self.proj_w = store.add(f"{prefix}.project.weight",
                                kaiming_uniform(rng, (out_channels, hidden, 1, 1), hidden))
        self.proj_b = store.add(f"{prefix}.project.bias", zeros(out_channels))
        self.residual = stride == 1 and in_channels == out_channels

    def __call__(self, x: Tensor) -> Tensor:
        h = F.relu6(F.conv2d(x, self.expand_w, self.expand_b))
        h = F.relu6(F.conv2d(h, self.dw_w, self.dw_b, stride=self.stride, pad=1, groups=self.hidden))
        out = F.conv2d(h, self.proj_w, self.proj_b)
        return out + x if self.residual else out


@dataclass
class TokenSequence:
    tokens: Tensor  # [N, D] or [B, N, D]
    grid: tuple[int, int]

    @property
    def count(self) -> int:
        return self.tokens.shape[-2]

    @property
    def dim(self) -> int:
        return self.tokens.shape[-1]


def flatten(z: Tensor) -> TokenSequence:
    """``[C, h, w]`` (or batch) -> tokens ``[h*w, C]``, row-major over the grid."""
    c, h, w = z.shape[-3:]
    if z.ndim == 3:
        return TokenSequence(transpose(z.reshape(c, h * w), (1, 0)), (h, w))
    b = z.shape[0]
    return TokenSequence(transpose(z.reshape(b, c, h * w), (0, 2, 1)), (h, w))


def unflatten(seq: TokenSequence) -> Tensor:
    """Inverse of ``flatten``."""
    rows, cols = seq.grid
    t = seq.tokens
    if rows * cols != t.shape[-2]:
        raise DimensionError(f"grid {seq.grid} does not match {t.shape[-2]} tokens")
    d = t.shape[-1]
    if t.ndim == 2:
        return transpose(t, (1, 0)).reshape(d, rows, cols)
    return transpose(t, (0, 2, 1)).reshape(t.shape[0], d, rows, cols)


def _check_even(h: int, w: int, what: str) -> None:
    if h % 2 or w % 2:
        raise DimensionError(f"{what}: spatial grid {h}x{w} must have even sides")


def patch_reshape(latent: Tensor, unit: InvertedResidual) -> Tensor:
    """``[C, h, w]`` -> ``[out_channels, h/2, w/2]`` through the inverted residual."""
    if latent.shape[-3] != unit.in_channels:
        raise DimensionError(f"patch_reshape: latent has {latent.shape[-3]} channels, "
                             f"unit expects {unit.in_channels}")
    _check_even(*latent.shape[-2:], "patch_reshape")
    return unit(latent)


def _check_image(x: Tensor, multiple: int, what: str) -> None:
    h, w = x.shape[-2:]
    if h % multiple or w % multiple:
        raise DimensionError(f"{what}: image size {h}x{w} must be a multiple of {multiple}")


def frozen_latent(codec: CodecModel, x: Tensor) -> Tensor:
    """Codec encoder output with no graph attached, so nothing flows back into it."""
    with no_grad():
        return codec_mod.encode(codec, x)


def ci2p_forward(codec: CodecModel, unit: InvertedResidual, x: Tensor) -> TokenSequence:
    """Image -> ``(H/32)*(W/32)`` tokens of width ``unit.out_channels``."""
    _check_image(x, CI2P_DOWNSAMPLE, "ci2p_forward")
    return flatten(patch_reshape(frozen_latent(codec, x), unit))


def ci2p_forward_ds(codec: CodecModel, x: Tensor) -> TokenSequence:
    """Image -> ``(H/16)*(W/16)`` tokens of the raw latent (width M)."""
    _check_image(x, codec_mod.DOWNSAMPLE, "ci2p_forward_ds")
    return flatten(frozen_latent(codec, x))


def cnn_reshape(seq: TokenSequence, unit: InvertedResidual) -> TokenSequence:
    """Un-flatten to the grid, apply the stride-2 unit, flatten again (N -> N/4 tokens)."""
    _check_even(*seq.grid, "cnn_reshape")
    return flatten(unit(unflatten(seq)))
