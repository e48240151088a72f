import math

import numpy as np
import pytest

from ci2pvit import codec as C
from ci2pvit.core import Rng, Tensor, grad_check, precision
from ci2pvit.errors import ContractError, DimensionError
from ci2pvit.harness import gen_synthetic

from oracles import logistic_cdf


@pytest.fixture(scope="module")
def default_codec():
    return C.CodecModel(N=128, M=192, seed=0)


@pytest.fixture(scope="module")
def toy_images():
    train, val = gen_synthetic(2, 20, 64, seed=1)
    return train.images, val.images


def test_encode_shapes(default_codec):
    assert C.encode(default_codec, Tensor(np.random.rand(3, 256, 256))).shape == (192, 16, 16)
    assert C.encode(default_codec, Tensor(np.random.rand(3, 64, 64))).shape == (192, 4, 4)


def test_encode_zero_input_is_finite(default_codec):
    y = C.encode(default_codec, Tensor(np.zeros((3, 32, 32))))
    assert y.shape == (192, 2, 2) and np.isfinite(y.data).all()


def test_encode_rejects_non_multiple_of_16(default_codec):
    with pytest.raises(DimensionError, match="pad"):
        C.encode(default_codec, Tensor(np.zeros((3, 40, 48))))


def test_decode_shapes(default_codec):
    assert C.decode(default_codec, Tensor(np.zeros((192, 16, 16)))).shape == (3, 256, 256)
    x_hat = C.decode(default_codec, Tensor(np.random.randn(192, 2, 2)))
    assert x_hat.shape == (3, 32, 32)
    assert x_hat.data.min() >= 0 and x_hat.data.max() <= 1


def test_quantize_eval_rounds_half_away():
    out = C.quantize(Tensor([0.4, -1.6, 2.5, -2.5]), "eval")
    np.testing.assert_array_equal(out.data, [0, -2, 3, -3])
    np.testing.assert_array_equal(C.quantize(out, "eval").data, out.data)


def test_quantize_train_noise_statistics():
    y = Tensor(np.zeros(100_000), dtype=np.float64)
    d = C.quantize(y, "train", Rng(7)).data - y.data
    assert np.abs(d).max() <= 0.5
    sigma = math.sqrt(1 / 12 / d.size)
    assert abs(d.mean()) < 3 * sigma


def test_quantize_contracts():
    with pytest.raises(ContractError):
        C.quantize(Tensor([0.0]), "train")
    with pytest.raises(ContractError):
        C.quantize(Tensor([0.0]), "nearest")


def _entropy(m, mean=0.0, log_scale=0.0):
    return C.EntropyParams(Tensor(np.full(m, mean)), Tensor(np.full(m, log_scale)))


def test_rate_single_element_at_mean():
    with precision(np.float64):
        bits = C.rate_bpp(Tensor(np.zeros((1, 1, 1))), _entropy(1), 1).item()
    p = logistic_cdf(0.5) - logistic_cdf(-0.5)
    assert bits == pytest.approx(-math.log2(p), abs=1e-9)
    assert bits == pytest.approx(2.030, abs=1e-3)


def test_rate_floor_region():
    with precision(np.float64):
        y = Tensor(np.full((4, 2, 3), 1e4))
        bits = C.rate_bpp(y, _entropy(4, log_scale=math.log(1e-3)), 10).item()
    assert bits == pytest.approx(2 * 3 * 4 * math.log2(1e9) / 10, rel=1e-12)


def test_rate_monotone_in_scale():
    rates = []
    with precision(np.float64):
        for ls in (1.0, 0.5, 0.0, -0.5, -1.0):
            rates.append(C.rate_bpp(Tensor(np.zeros((3, 2, 2))), _entropy(3, log_scale=ls), 16).item())
    assert all(b <= a for a, b in zip(rates, rates[1:]))


def test_rd_loss_degenerate_cases():
    model = C.CodecModel(8, 12, seed=0)
    x = Tensor(np.random.default_rng(0).uniform(0, 1, (3, 32, 32)))
    parts = C.rd_loss(model, x, 0.0, "train", Rng(1))
    assert parts.total.item() == parts.r_bpp.item()
    bypass = C.rd_loss(model, x, 100.0, "eval", decode_fn=lambda m, y: x)
    assert bypass.d_mse.item() == 0.0
    assert bypass.total.item() == bypass.r_bpp.item()


def test_rd_loss_grad_wrt_encoder_kernel_slice():
    with precision(np.float64):
        model = C.CodecModel(8, 12, seed=0)
        x = Tensor(np.random.default_rng(0).uniform(0, 1, (1, 3, 32, 32)))
        w = model.store["encoder.conv1.weight"]
        # the output clamp leaves some pixels within 1e-5 of a kink, so use the smallest step
        err = grad_check(lambda p: C.rd_loss(model, x, 100.0, "train", Rng(3)).total, w, h=1e-6,
                         coords=range(0, 25 * 8, 13))
    assert err < 1e-4


def test_train_codec_zero_steps_is_noop(toy_images):
    model = C.CodecModel(8, 12, seed=0)
    before = model.store.snapshot()
    assert C.train_codec(model, toy_images[0], 0, 650.25, 1e-3, 0) == []
    assert all(before[k].tobytes() == v.tobytes() for k, v in model.store.snapshot().items())


def test_train_codec_deterministic(toy_images):
    finals = []
    for _ in range(2):
        model = C.CodecModel(8, 12, seed=0)
        C.train_codec(model, toy_images[0], 3, 650.25, 1e-3, seed=1, batch_size=4)
        finals.append(model.store.snapshot())
    assert all(finals[0][k].tobytes() == finals[1][k].tobytes() for k in finals[0])


def test_training_lowers_heldout_mse(toy_images):
    train, val = toy_images
    trained = C.CodecModel(16, 24, seed=0)
    C.train_codec(trained, train, 60, 650.25, 2e-3, seed=1, batch_size=8)
    fresh = C.CodecModel(16, 24, seed=0)
    assert C.mean_psnr(trained, val[:8]) > C.mean_psnr(fresh, val[:8])


def test_psnr_examples():
    x = np.random.default_rng(0).uniform(0, 1, (3, 8, 8))
    assert C.psnr(x, x) == math.inf
    assert C.psnr(np.zeros(4), np.full(4, 0.1)) == pytest.approx(20.0, abs=1e-9)
    y = np.random.default_rng(1).uniform(0, 1, (3, 8, 8))
    total = 0.0
    for a, b in zip(x.ravel(), y.ravel()):
        total += (a - b) ** 2
    assert C.psnr(x, y) == pytest.approx(10 * math.log10(x.size / total), abs=1e-9)


def test_encoder_freeze():
    model = C.CodecModel(8, 12, seed=0)
    model.freeze_encoder()
    assert all(model.store.is_frozen(n) for n in model.encoder_names())
    assert not model.store.is_frozen("decoder.deconv0.weight")
