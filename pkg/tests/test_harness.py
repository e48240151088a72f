import struct
import zlib

import numpy as np
import pytest

from ci2pvit.codec import CodecModel
from ci2pvit.core import ParamStore, Rng, Tensor, precision
from ci2pvit.errors import (CheckpointCRCError, CheckpointError, CheckpointVersionError, ConfigError,
                            DataError, NonFiniteError)
from ci2pvit.harness import (Dataset, Splits, TrainConfig, augment_flip, checkpoint_bytes, evaluate,
                             gen_synthetic, load_checkpoint, load_dataset, metrics_csv, read_ppm,
                             save_checkpoint, save_dataset, top1, train_classifier, train_config,
                             write_ppm)
from ci2pvit.vit import ModelDesc, build_model


# -- synthetic data ---------------------------------------------------------

def test_gen_synthetic_split_sizes_and_determinism():
    a = gen_synthetic(2, 50, 64, seed=3)
    assert len(a.train) + len(a.val) == 100 and (len(a.train), len(a.val)) == (80, 20)
    assert np.bincount(a.val.labels).tolist() == [10, 10]
    b = gen_synthetic(2, 50, 64, seed=3)
    assert a.train.images.tobytes() == b.train.images.tobytes()
    assert a.val.labels.tobytes() == b.val.labels.tobytes()
    assert a.train.images.min() >= 0 and a.train.images.max() <= 1


def test_gen_synthetic_contracts():
    with pytest.raises(Exception):
        gen_synthetic(1, 10, 64, 0)
    with pytest.raises(Exception):
        gen_synthetic(2, 10, 48, 0)


def test_nearest_neighbour_beats_chance():
    train, val = gen_synthetic(2, 50, 64, seed=3)
    tr = train.images.reshape(len(train), -1).astype(np.float64)
    va = val.images.reshape(len(val), -1).astype(np.float64)
    d = ((va[:, None] - tr[None]) ** 2).sum(-1)
    assert (train.labels[d.argmin(1)] == val.labels).mean() > 0.6


# -- PPM and manifest -------------------------------------------------------

def _write_raw_ppm(path, w, h, maxval, body):
    path.write_bytes(f"P6\n{w} {h}\n{maxval}\n".encode() + body)


def test_load_single_image_dataset(tmp_path):
    px = np.zeros((2, 2, 3), dtype=np.uint8)
    px[0, 0, 0] = 255
    _write_raw_ppm(tmp_path / "a.ppm", 2, 2, 255, px.tobytes())
    (tmp_path / "manifest.csv").write_text("path,label\na.ppm,0\n")
    ds = load_dataset(tmp_path)
    assert len(ds) == 1 and ds.class_count == 1
    assert ds.images[0, 0, 0, 0] == 1.0 and ds.images[0, 1, 0, 0] == 0.0


def test_load_errors_name_the_file(tmp_path):
    with pytest.raises(DataError, match="manifest"):
        load_dataset(tmp_path)
    _write_raw_ppm(tmp_path / "deep.ppm", 2, 2, 65535, bytes(24))
    (tmp_path / "manifest.csv").write_text("path,label\ndeep.ppm,0\n")
    with pytest.raises(DataError, match="deep.ppm.*maxval"):
        load_dataset(tmp_path)
    (tmp_path / "bad.ppm").write_bytes(b"P3\n2 2\n255\n")
    (tmp_path / "manifest.csv").write_text("path,label\nbad.ppm,0\n")
    with pytest.raises(DataError, match="bad.ppm"):
        load_dataset(tmp_path)
    _write_raw_ppm(tmp_path / "ok.ppm", 2, 2, 255, bytes(12))
    (tmp_path / "manifest.csv").write_text("path,label\nok.ppm,-1\n")
    with pytest.raises(DataError, match="ok.ppm"):
        load_dataset(tmp_path)


def test_load_rejects_mismatched_sizes(tmp_path):
    _write_raw_ppm(tmp_path / "a.ppm", 2, 2, 255, bytes(12))
    _write_raw_ppm(tmp_path / "b.ppm", 4, 2, 255, bytes(24))
    (tmp_path / "manifest.csv").write_text("path,label\na.ppm,0\nb.ppm,1\n")
    with pytest.raises(DataError, match="b.ppm"):
        load_dataset(tmp_path)


def test_ppm_header_comments(tmp_path):
    (tmp_path / "c.ppm").write_bytes(b"P6\n# made by hand\n1 1\n255\n" + bytes([10, 20, 30]))
    np.testing.assert_allclose(read_ppm(tmp_path / "c.ppm")[:, 0, 0], np.array([10, 20, 30]) / 255)


def test_save_load_dataset_roundtrip(tmp_path):
    train, _ = gen_synthetic(2, 5, 32, seed=0)
    save_dataset(train, tmp_path)
    back = load_dataset(tmp_path)
    assert back.labels.tolist() == train.labels.tolist()
    assert np.abs(back.images - train.images).max() <= 0.5 / 255 + 1e-7


# -- flip -------------------------------------------------------------------

def test_flip_identity_and_involution():
    x = Tensor(np.random.rand(3, 4, 5))
    rng = Rng(0)
    for _ in range(20):
        assert augment_flip(x, rng, p=0.0) is x
    twice = augment_flip(augment_flip(x, rng, force=True), rng, force=True)
    assert twice.data.tobytes() == x.data.tobytes()
    np.testing.assert_array_equal(augment_flip(x, rng, force=True).data, x.data[..., ::-1])


def test_flip_frequency():
    rng = Rng(11)
    x = np.arange(6.0).reshape(1, 2, 3)
    flips = sum(augment_flip(x, rng, 0.5)[0, 0, 0] == 2.0 for _ in range(10_000))
    assert 0.48 <= flips / 10_000 <= 0.52


# -- checkpoints ------------------------------------------------------------

def test_checkpoint_size_for_one_2x2_f32():
    blob = checkpoint_bytes({"w": np.zeros((2, 2), np.float32)})
    # magic 4 + version 4 + count 4 + name_len 4 + "w" 1 + dtype 1 + rank 1 + dims 2*8 + payload 16 + crc 4
    assert len(blob) == 4 + 4 + 4 + (4 + 1 + 1 + 1 + 16 + 16) + 4 == 55


def test_checkpoint_roundtrip_bitwise(tmp_path):
    store = ParamStore()
    store.add("a", np.random.rand(3, 4).astype(np.float32))
    with precision(np.float64):
        store.add("b.c", np.random.rand(5))
    store.add("scalar", Tensor(np.float32(2.5), dtype=np.float32))
    save_checkpoint(store, tmp_path / "x.ckpt")
    loaded = load_checkpoint(tmp_path / "x.ckpt")
    for name in store:
        assert loaded[name].dtype == store[name].dtype
        assert loaded[name].data.tobytes() == store[name].data.tobytes()
    save_checkpoint(loaded, tmp_path / "y.ckpt")
    assert (tmp_path / "x.ckpt").read_bytes() == (tmp_path / "y.ckpt").read_bytes()


def test_checkpoint_errors_are_distinct(tmp_path):
    blob = checkpoint_bytes({"w": np.ones(3, np.float32)})
    p = tmp_path / "c.ckpt"
    p.write_bytes(blob[:-7])
    with pytest.raises(CheckpointCRCError):
        load_checkpoint(p)
    flipped = bytearray(blob)
    flipped[20] ^= 0xFF
    p.write_bytes(bytes(flipped))
    with pytest.raises(CheckpointCRCError):
        load_checkpoint(p)
    body = blob[:4] + struct.pack("<I", 2) + blob[8:-4]
    p.write_bytes(body + struct.pack("<I", zlib.crc32(body)))
    with pytest.raises(CheckpointVersionError):
        load_checkpoint(p)
    p.write_bytes(b"NOPE" + blob[4:])
    with pytest.raises(CheckpointError):
        load_checkpoint(p)
    p.write_bytes(b"")
    with pytest.raises(CheckpointError):
        load_checkpoint(p)


# -- config -----------------------------------------------------------------

def test_train_config_defaults_and_validation():
    cfg = TrainConfig()
    assert (cfg.lr, cfg.beta1, cfg.beta2, cfg.flip_prob, cfg.batch_size, cfg.cosine) == (
        1e-4, 0.9, 0.999, 0.5, 32, False)
    with pytest.raises(ConfigError):
        TrainConfig(flip_prob=1.5).validate()
    with pytest.raises(ConfigError):
        TrainConfig(lr=0).validate()


def test_train_config_sources(monkeypatch):
    monkeypatch.setenv("CI2P_SEED", "17")
    cfg = train_config({"lr": "0.01", "epochs": "3", "cosine": "true"}, epochs=5)
    assert (cfg.lr, cfg.epochs, cfg.seed, cfg.cosine) == (0.01, 5, 17, True)
    assert train_config({"seed": "2"}).seed == 2
    with pytest.raises(ConfigError):
        train_config({"epochs": "many"})
    assert cfg.lr_at(1, 10) == pytest.approx(0.01)
    assert TrainConfig(lr=0.01).lr_at(7, 10) == 0.01


# -- evaluation -------------------------------------------------------------

def test_top1_oracle_and_tie_rule():
    labels = np.array([0, 1, 1, 0, 1])
    assert top1(np.eye(2)[labels], labels) == 1.0
    assert top1(np.zeros((5, 2)), labels) == pytest.approx(2 / 5)


def _tiny_setup(per_class=10, seed=0):
    desc = ModelDesc(variant="ci2p_vit", image_size=64, depth=2, dim=16, heads=2, mlp_hidden=32,
                     num_classes=2, codec_hidden=8, codec_latent=12)
    return desc, CodecModel(8, 12, seed=seed), gen_synthetic(2, per_class, 64, seed=seed)


def test_random_model_near_chance():
    desc, codec, _ = _tiny_setup()
    rng = np.random.default_rng(0)
    ds = Dataset(rng.uniform(0, 1, (200, 3, 64, 64)).astype(np.float32), np.repeat([0, 1], 100), 2, "val")
    model, _ = build_model(desc, codec, seed=5)
    assert 0.35 <= evaluate(model, ds) <= 0.65


# -- training ---------------------------------------------------------------

def test_zero_epochs_is_untouched(tmp_path):
    desc, codec, data = _tiny_setup()
    model, store = build_model(desc, codec)
    before = store.snapshot()
    res = train_classifier(desc, codec, data, TrainConfig(epochs=0), tmp_path, model=model)
    assert res.history == []
    assert all(before[k].tobytes() == v.tobytes() for k, v in store.snapshot().items())


def test_training_writes_metrics_and_checkpoint(tmp_path):
    desc, codec, data = _tiny_setup()
    res = train_classifier(desc, codec, data, TrainConfig(epochs=2, batch_size=7, lr=1e-3), tmp_path)
    lines = (tmp_path / "metrics.csv").read_text().splitlines()
    assert lines[0] == "epoch,step,split,loss,accuracy"
    assert [ln.split(",")[:3] for ln in lines[1:]] == [["1", "3", "train"], ["1", "3", "val"],
                                                        ["2", "6", "train"], ["2", "6", "val"]]
    assert metrics_csv(res.history) == (tmp_path / "metrics.csv").read_text()
    loaded = load_checkpoint(tmp_path / "model.ckpt")
    assert set(loaded) == set(res.model.store)
    assert res.encoder_frozen


def test_non_finite_loss_reports_epoch_and_step():
    desc, codec, data = _tiny_setup()
    model, store = build_model(desc, codec)
    store["head.weight"].data[:] = np.float32(3e38)
    store["head.bias"].data[:] = np.float32(3e38)
    with pytest.raises(NonFiniteError, match="epoch 1, step 1"):
        train_classifier(desc, codec, data, TrainConfig(epochs=1), model=model)


def test_vit_b16_trains_without_codec():
    desc = ModelDesc(variant="vit_b16", image_size=32, depth=1, dim=16, heads=2, mlp_hidden=32,
                     num_classes=2, patch_size=16)
    data = gen_synthetic(2, 5, 32, seed=0)
    res = train_classifier(desc, None, data, TrainConfig(epochs=1))
    assert len(res.history) == 2 and res.encoder_frozen


def test_splits_type():
    _, _, data = _tiny_setup()
    assert isinstance(data, Splits) and data.train.split == "train" and data.val.split == "val"
