"""Rate-distortion convolutional autoencoder.

Encoder: four 5x5 stride-2 convolutions (3 -> N -> N -> N -> M) with
generalized divisive normalization after the first three, so the latent is
16x smaller spatially. Decoder mirrors it with transposed convolutions and
inverse GDN. The rate term is the analytic code length of the quantized
latent under a per-channel discretized logistic density; no bitstream is
produced.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

from .core import functional as F
from .core.params import ParamStore, adam_step, kaiming_uniform, ones, zeros
from .core.rng import Rng
from .core.tensor import Tensor, absolute, clamp, get_default_dtype, log, no_grad, sigmoid, sqrt
from .errors import ContractError, DimensionError, NonFiniteError

DOWNSAMPLE = 16
KERNEL = 5
LOG_SCALE_MIN = math.log(1e-3)
PROB_FLOOR = 1e-9
GDN_BETA_MIN = 1e-6


class GDN:
    """y_i = x_i / sqrt(beta_i + sum_j gamma_ij x_j^2); ``inverse`` multiplies instead."""

    def __init__(self, store: ParamStore, prefix: str, channels: int, inverse: bool = False):
        self.inverse = inverse
        self.beta = store.add(f"{prefix}.beta", ones(channels))
        self.gamma = store.add(f"{prefix}.gamma", 0.1 * np.eye(channels, dtype=get_default_dtype()))

    def __call__(self, x: Tensor) -> Tensor:
        c = self.gamma.shape[0]
        beta = clamp(self.beta, lo=GDN_BETA_MIN)
        gamma = clamp(self.gamma, lo=0.0).reshape(c, c, 1, 1)
        norm = sqrt(F.conv2d(x * x, gamma, beta))
        return x * norm if self.inverse else x / norm


@dataclass
class EntropyParams:
    mean: Tensor
    log_scale: Tensor


class CodecModel:
    """Encoder/decoder conv stacks plus entropy-model parameters.

    Parameters live in ``self.store`` under ``encoder.*``, ``decoder.*`` and
    ``entropy.*``.
    """

    def __init__(self, N: int = 128, M: int = 192, seed: int = 0, rng: Rng | None = None):
        self.N, self.M = N, M
        rng = rng or Rng(seed)
        self.store = store = ParamStore()
        enc_ch = [3, N, N, N, M]
        self.enc = []
        for i in range(4):
            cin, cout = enc_ch[i], enc_ch[i + 1]
            w = store.add(f"encoder.conv{i}.weight",
                          kaiming_uniform(rng, (cout, cin, KERNEL, KERNEL), cin * KERNEL * KERNEL))
            b = store.add(f"encoder.conv{i}.bias", zeros(cout))
            gdn = GDN(store, f"encoder.gdn{i}", cout) if i < 3 else None
            self.enc.append((w, b, gdn))
        dec_ch = [M, N, N, N, 3]
        self.dec = []
        for i in range(4):
            cin, cout = dec_ch[i], dec_ch[i + 1]
            w = store.add(f"decoder.deconv{i}.weight",
                          kaiming_uniform(rng, (cin, cout, KERNEL, KERNEL), cin * KERNEL * KERNEL))
            b = store.add(f"decoder.deconv{i}.bias", zeros(cout))
            igdn = GDN(store, f"decoder.igdn{i}", cout, inverse=True) if i < 3 else None
            self.dec.append((w, b, igdn))
        self.entropy = EntropyParams(store.add("entropy.mean", zeros(M)),
                                     store.add("entropy.log_scale", zeros(M)))

    def encoder_names(self) -> list[str]:
        return [n for n in self.store if n.startswith("encoder.")]

    def freeze_encoder(self) -> None:
        self.store.freeze("encoder.")


def _check_input(x: Tensor, multiple: int, what: str) -> None:
    if x.ndim not in (3, 4) or x.shape[-3] != 3:
        raise DimensionError(f"{what} expects [3,H,W] or [B,3,H,W] input, got {x.shape}")
    h, w = x.shape[-2:]
    if h % multiple or w % multiple:
        raise DimensionError(
            f"{what}: image size {h}x{w} is not a multiple of {multiple}; pad the image first")


def encode(model: CodecModel, x: Tensor) -> Tensor:
    """Image ``[3,H,W]`` (or batch) -> latent ``[M, H/16, W/16]``."""
    _check_input(x, DOWNSAMPLE, "encode")
    y = x
    for w, b, gdn in model.enc:
        y = F.conv2d(y, w, b, stride=2, pad=KERNEL // 2)
        if gdn is not None:
            y = gdn(y)
    return y


def decode(model: CodecModel, y_hat: Tensor) -> Tensor:
    """Latent ``[M,h,w]`` (or batch) -> reconstruction ``[3,16h,16w]`` clamped to [0, 1]."""
    if y_hat.ndim not in (3, 4) or y_hat.shape[-3] != model.M:
        raise DimensionError(f"decode expects [{model.M},h,w] latent, got {y_hat.shape}")
    x = y_hat
    for w, b, igdn in model.dec:
        x = F.conv_transpose2d(x, w, b, stride=2, pad=KERNEL // 2, output_padding=1)
        if igdn is not None:
            x = igdn(x)
    return clamp(x, 0.0, 1.0)


def round_half_away(a: np.ndarray) -> np.ndarray:
    return np.sign(a) * np.floor(np.abs(a) + 0.5)


def quantize(y: Tensor, mode: str, rng: Rng | None = None) -> Tensor:
    """Eval: round half away from zero (no gradient). Train: add U(-0.5, 0.5) noise."""
    if mode == "eval":
        return Tensor(round_half_away(y.data), dtype=y.dtype)
    if mode == "train":
        if rng is None:
            raise ContractError("train-mode quantize needs an Rng")
        return y + Tensor(rng.uniform(-0.5, 0.5, y.shape), dtype=y.dtype)
    raise ContractError(f"unknown quantize mode '{mode}'")


def rate_bpp(y_hat: Tensor, entropy: EntropyParams, num_pixels: int) -> Tensor:
    """Estimated bits per pixel of ``y_hat`` under the per-channel logistic.

    ``num_pixels`` is the pixel count the latent covers (B*H*W for a batch).
    """
    m = entropy.mean.shape[0]
    if y_hat.shape[-3] != m:
        raise DimensionError(f"rate_bpp: latent {y_hat.shape} has no {m}-channel axis at -3")
    mean = entropy.mean.reshape(m, 1, 1)
    scale = clamp(entropy.log_scale, lo=LOG_SCALE_MIN).exp().reshape(m, 1, 1)
    upper = (y_hat + 0.5 - mean) / scale
    lower = (y_hat - 0.5 - mean) / scale
    # evaluate in the tail nearer zero to avoid cancellation of two sigmoids near 1
    sign = -np.sign(upper.data + lower.data)
    sign[sign == 0] = 1.0
    p = absolute(sigmoid(upper * sign) - sigmoid(lower * sign))
    p = clamp(p, lo=PROB_FLOOR)
    return log(p).sum() * (-1.0 / (math.log(2.0) * num_pixels))


@dataclass
class RdLossParts:
    d_mse: Tensor
    r_bpp: Tensor
    lam: float
    total: Tensor

    def as_floats(self) -> dict[str, float]:
        return {"d_mse": self.d_mse.item(), "r_bpp": self.r_bpp.item(),
                "lambda": self.lam, "total": self.total.item()}


def rd_loss(model: CodecModel, x: Tensor, lam: float, mode: str = "train", rng: Rng | None = None,
            decode_fn: Callable[[CodecModel, Tensor], Tensor] | None = None) -> RdLossParts:
    """lam * MSE(x, x_hat) + estimated bpp. ``decode_fn`` replaces the decoder (test hook)."""
    if lam < 0:
        raise ContractError(f"lambda must be non-negative, got {lam}")
    y = encode(model, x)
    y_hat = quantize(y, mode, rng)
    x_hat = (decode_fn or decode)(model, y_hat)
    diff = x_hat - x
    d_mse = (diff * diff).mean()
    npix = int(np.prod(x.shape[-2:])) * (x.shape[0] if x.ndim == 4 else 1)
    r_bpp = rate_bpp(y_hat, model.entropy, npix)
    total = d_mse * float(lam) + r_bpp
    return RdLossParts(d_mse, r_bpp, float(lam), total)


def train_codec(model: CodecModel, images: np.ndarray, steps: int, lam: float, lr: float,
                seed: int, batch_size: int = 8,
                on_step: Callable[[int, dict], None] | None = None) -> list[dict[str, float]]:
    """Adam on the rate-distortion loss over random minibatches of ``images`` ``[n,3,H,W]``.

    Batches are drawn from a seeded permutation that is re-shuffled each pass.
    """
    images = np.asarray(images)
    if images.ndim != 4:
        raise DimensionError(f"train_codec expects [n,3,H,W] images, got {images.shape}")
    _check_input(Tensor(images[:1]), DOWNSAMPLE, "train_codec")
    rng = Rng(seed)
    data_rng, noise_rng = rng.spawn("batches"), rng.spawn("noise")
    history: list[dict[str, float]] = []
    order: list[int] = []
    dtype = model.entropy.mean.dtype
    for step in range(1, steps + 1):
        if len(order) < batch_size:
            order.extend(data_rng.permutation(len(images)).tolist())
        batch, order = order[:batch_size], order[batch_size:]
        x = Tensor(images[batch], dtype=dtype)
        parts = rd_loss(model, x, lam, "train", noise_rng)
        if not math.isfinite(parts.total.item()):
            raise NonFiniteError(f"train_codec: non-finite loss at step {step}")
        parts.total.backward()
        adam_step(model.store, lr, t=step)
        rec = {"step": step, **parts.as_floats()}
        history.append(rec)
        if on_step:
            on_step(step, rec)
    return history


def reconstruct(model: CodecModel, x: Tensor) -> tuple[Tensor, float]:
    """Eval-mode round trip; returns (x_hat, bpp)."""
    with no_grad():
        y_hat = quantize(encode(model, x), "eval")
        x_hat = decode(model, y_hat)
        npix = int(np.prod(x.shape[-2:])) * (x.shape[0] if x.ndim == 4 else 1)
        bpp = rate_bpp(y_hat, model.entropy, npix).item()
    return x_hat, bpp


def psnr(x, x_hat) -> float:
    """10 log10(1 / MSE) in dB for images in [0, 1]; ``inf`` when identical."""
    a = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    b = np.asarray(x_hat.data if isinstance(x_hat, Tensor) else x_hat, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"psnr: shape mismatch {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    return math.inf if mse == 0.0 else 10.0 * math.log10(1.0 / mse)


def mean_psnr(model: CodecModel, images: Iterable[np.ndarray]) -> float:
    vals = []
    for img in images:
        x = Tensor(img, dtype=model.entropy.mean.dtype)
        x_hat, _ = reconstruct(model, x)
        vals.append(psnr(x, x_hat))
    return float(np.mean(vals))
