"""Finite-difference gradient suite over every differentiable op and the end-to-end losses.

Each case reduces its op's output to a scalar through a fixed random
weighting, so the whole Jacobian is exercised, and reports
``grad_check``'s max relative error (64-bit, h=1e-5).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import codec as codec_mod
from .core import functional as F
from .core import tensor as T
from .core.gradcheck import grad_check
from .core.rng import Rng
from .core.tensor import Tensor, precision

TOLERANCE = 1e-4
# the decoder output clamp puts some pixels within 1e-5 of a kink at init
RD_STEP = 1e-6


@dataclass
class GradCase:
    name: str
    error: float

    @property
    def ok(self) -> bool:
        return self.error < TOLERANCE


def _weighted(out: Tensor, w: np.ndarray) -> Tensor:
    return (out * Tensor(w)).sum()


def _op_case(rng: Rng, name: str, fn: Callable[[Tensor], Tensor], point: np.ndarray,
             coords=None) -> GradCase:
    out_shape = fn(Tensor(point)).shape
    w = rng.normal(1.0, out_shape)
    x = Tensor(point)
    return GradCase(name, grad_check(lambda p: _weighted(fn(p), w), x, 1e-5, coords))


def _away(rng: Rng, shape, lo: float = 0.2, hi: float = 2.0) -> np.ndarray:
    """Values with magnitude in [lo, hi] and random sign (keeps clear of kinks at zero)."""
    return rng.uniform(lo, hi, shape) * np.where(rng.uniform(0, 1, shape) < 0.5, -1.0, 1.0)


def op_cases(seed: int = 0) -> list[GradCase]:
    rng = Rng(seed)
    n = rng.normal
    cases: list[GradCase] = []
    with precision(np.float64):
        b = Tensor(n(1.0, (3, 4)))
        pos = Tensor(rng.uniform(0.5, 2.0, (3, 4)))
        b3 = Tensor(n(1.0, (2, 3, 4)))
        cases += [
            _op_case(rng, "add", lambda p: p + b, n(1.0, (3, 4))),
            _op_case(rng, "add_broadcast", lambda p: b3 + p, n(1.0, (3, 4))),
            _op_case(rng, "sub", lambda p: b - p, n(1.0, (3, 4))),
            _op_case(rng, "mul", lambda p: p * b, n(1.0, (3, 4))),
            _op_case(rng, "div_numerator", lambda p: p / pos, n(1.0, (3, 4))),
            _op_case(rng, "div_denominator", lambda p: b / p, rng.uniform(0.5, 2.0, (3, 4))),
            _op_case(rng, "power", lambda p: T.power(p, 3.0), n(1.0, (3, 4))),
            _op_case(rng, "exp", T.exp, n(1.0, (3, 4))),
            _op_case(rng, "log", T.log, rng.uniform(0.5, 2.0, (3, 4))),
            _op_case(rng, "sqrt", T.sqrt, rng.uniform(0.5, 2.0, (3, 4))),
            _op_case(rng, "absolute", T.absolute, _away(rng, (3, 4))),
            _op_case(rng, "sigmoid", T.sigmoid, n(2.0, (3, 4))),
            _op_case(rng, "clamp", lambda p: T.clamp(p, -1.0, 1.0),
                     np.concatenate([_away(rng, (6,), 0.1, 0.9), _away(rng, (6,), 1.1, 2.0)])),
            _op_case(rng, "sum_axis", lambda p: T.sum_(p, axis=1, keepdims=True), n(1.0, (3, 4))),
            _op_case(rng, "mean_axis", lambda p: T.mean(p, axis=0), n(1.0, (3, 4))),
            _op_case(rng, "reshape", lambda p: T.reshape(p, (2, 6)), n(1.0, (3, 4))),
            _op_case(rng, "transpose", lambda p: T.transpose(p, (2, 0, 1)), n(1.0, (2, 3, 4))),
            _op_case(rng, "swapaxes", lambda p: T.swapaxes(p, 0, 2), n(1.0, (2, 3, 4))),
            _op_case(rng, "getitem", lambda p: T.getitem(p, (slice(None), np.array([0, 2, 2]))),
                     n(1.0, (3, 4))),
            _op_case(rng, "flip", lambda p: T.flip(p, -1), n(1.0, (3, 4))),
        ]
        mb = Tensor(n(1.0, (4, 5)))
        ma = Tensor(n(1.0, (2, 3, 4)))
        cases += [
            _op_case(rng, "matmul_a", lambda p: T.matmul(p, mb), n(1.0, (3, 4))),
            _op_case(rng, "matmul_b", lambda p: T.matmul(ma, p), n(1.0, (4, 5))),
        ]
        x = n(1.0, (3, 7, 7))
        xt = Tensor(x)
        w = Tensor(n(0.3, (4, 3, 3, 3)))
        bias = Tensor(n(0.1, (4,)))
        wg = Tensor(n(0.3, (4, 2, 3, 3)))
        cases += [
            _op_case(rng, "conv2d_input", lambda p: F.conv2d(p, w, bias, stride=2, pad=1), x),
            _op_case(rng, "conv2d_weight", lambda p: F.conv2d(xt, p, bias, stride=2, pad=1), w.data.copy()),
            _op_case(rng, "conv2d_bias", lambda p: F.conv2d(xt, w, p, stride=2, pad=1), bias.data.copy()),
            _op_case(rng, "conv2d_groups", lambda p: F.conv2d(p, wg, groups=2),
                     n(1.0, (2, 4, 5, 5))),
            _op_case(rng, "conv2d_depthwise_weight",
                     lambda p: F.conv2d(Tensor(x[:3]), p, stride=2, pad=1, groups=3), n(0.3, (6, 1, 3, 3))),
        ]
        wt = Tensor(n(0.3, (3, 2, 5, 5)))
        bt = Tensor(n(0.1, (2,)))
        cases += [
            _op_case(rng, "conv_transpose2d_input",
                     lambda p: F.conv_transpose2d(p, wt, None, stride=2, pad=2, output_padding=1),
                     n(1.0, (3, 3, 3))),
            _op_case(rng, "conv_transpose2d_weight",
                     lambda p: F.conv_transpose2d(Tensor(x[:, :3, :3]), p, bt,
                                                  stride=2, pad=2, output_padding=1),
                     wt.data.copy()),
        ]
        g = Tensor(n(1.0, (6,)) + 1.0)
        be = Tensor(n(1.0, (6,)))
        rows = n(1.0, (4, 6))
        lw, lb = Tensor(n(0.5, (5, 3))), Tensor(n(0.1, (3,)))
        cases += [
            _op_case(rng, "gelu", F.gelu, n(2.0, (3, 4))),
            _op_case(rng, "relu6", F.relu6, np.concatenate([rng.uniform(0.2, 5.8, (6,)),
                                                            rng.uniform(-2, -0.2, (3,)), rng.uniform(6.2, 8, (3,))])),
            _op_case(rng, "relu", F.relu, _away(rng, (3, 4))),
            _op_case(rng, "layernorm_x", lambda p: F.layernorm(p, g, be), rows),
            _op_case(rng, "layernorm_gamma", lambda p: F.layernorm(Tensor(rows), p, be), g.data.copy()),
            _op_case(rng, "layernorm_beta", lambda p: F.layernorm(Tensor(rows), g, p), be.data.copy()),
            _op_case(rng, "softmax", F.softmax, n(2.0, (3, 5))),
            _op_case(rng, "log_softmax", F.log_softmax, n(2.0, (3, 5))),
            GradCase("cross_entropy", grad_check(lambda p: F.cross_entropy(p, np.array([0, 3, 4])),
                                                 Tensor(n(2.0, (3, 5))))),
            _op_case(rng, "linear", lambda p: F.linear(p, lw, lb),
                     n(1.0, (2, 4, 5))),
        ]
        from .vit import msa_forward
        params = {"qkv.weight": Tensor(n(0.3, (8, 24))), "qkv.bias": Tensor(n(0.1, (24,))),
                  "proj.weight": Tensor(n(0.3, (8, 8))), "proj.bias": Tensor(n(0.1, (8,)))}
        tokens = n(1.0, (5, 8))

        def msa_wrt(key):
            def f(p):
                return msa_forward(Tensor(tokens), 2, {**params, key: p})
            return f
        cases.append(_op_case(rng, "msa_tokens", lambda p: msa_forward(p, 2, params), tokens))
        for key in ("qkv.weight", "proj.weight"):
            cases.append(_op_case(rng, f"msa_{key}", msa_wrt(key), params[key].data.copy()))
    return cases


def _model_case(name: str, loss_fn: Callable[[], Tensor], param: Tensor, coords,
                h: float = 1e-5) -> GradCase:
    return GradCase(name, grad_check(lambda p: loss_fn(), param, h, coords))


def model_cases(seed: int = 0) -> list[GradCase]:
    """rd_loss with fixed noise, and the tiny ci2p_vit / ci2p_vit_ds classification losses."""
    from .vit import ModelDesc, build_model
    rng = Rng(seed)
    cases: list[GradCase] = []
    with precision(np.float64):
        codec = codec_mod.CodecModel(N=8, M=12, seed=seed)
        # move gamma off its clamp boundary at 0 so central differences are two-sided
        for name in codec.store:
            if name.endswith(".gamma"):
                codec.store[name].data += 0.01
        img = Tensor(rng.uniform(0.2, 0.8, (1, 3, 32, 32)))

        def rd():
            return codec_mod.rd_loss(codec, img, 100.0, "train", Rng(seed + 1)).total
        pick = lambda t, k: rng.permutation(t.data.size)[:k]  # noqa: E731
        for pname in ("encoder.conv0.weight", "encoder.gdn1.gamma", "decoder.deconv3.weight",
                      "decoder.igdn0.beta", "entropy.log_scale", "entropy.mean"):
            p = codec.store[pname]
            cases.append(_model_case(f"rd_loss[{pname}]", rd, p, pick(p, 12), h=RD_STEP))
        cases.append(GradCase("rd_loss[image]", grad_check(
            lambda p: codec_mod.rd_loss(codec, p, 100.0, "train", Rng(seed + 1)).total,
            Tensor(img.data.copy()), RD_STEP, pick(img, 16))))

        base = dict(image_size=64, depth=2, dim=16, heads=2, mlp_hidden=32, num_classes=3,
                    codec_hidden=8, codec_latent=12)
        x = Tensor(rng.uniform(0, 1, (2, 3, 64, 64)))
        labels = np.array([0, 2])
        for desc, names in (
            (ModelDesc(variant="ci2p_vit", **base),
             ("patch_reshape.expand.weight", "patch_reshape.depthwise.weight", "blocks.0.attn.qkv.weight",
              "blocks.1.mlp.fc1.weight", "pos_embed", "norm.gamma", "head.weight")),
            (ModelDesc(variant="ci2p_vit_ds", ds_early_dim=12, ds_split=1, ds_early_heads=2,
                       ds_early_mlp=24, **base),
             ("blocks.0.attn.qkv.weight", "cnn_reshape.project.weight", "pos_embed2",
              "blocks.1.attn.proj.weight", "head.bias")),
        ):
            model, store = build_model(desc, codec_mod.CodecModel(8, 12, seed=seed), seed=seed)

            def loss(model=model):
                return F.cross_entropy(model(x), labels)
            for pname in names:
                p = store[pname]
                cases.append(_model_case(f"{desc.variant}[{pname}]", loss, p, pick(p, 10)))
    return cases


def run_suite(seed: int = 0) -> list[GradCase]:
    return op_cases(seed) + model_cases(seed)
