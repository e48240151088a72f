"""Classifier training and evaluation loops."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..codec import CodecModel
from ..core.functional import cross_entropy
from ..core.params import adam_step
from ..core.rng import Rng
from ..core.tensor import Tensor, get_default_dtype, no_grad
from ..errors import ContractError, NonFiniteError
from ..vit import ModelDesc, VisionClassifier, build_model
from .checkpoint import save_checkpoint
from .config import TrainConfig
from .data import Dataset, Splits

METRICS_HEADER = ("epoch", "step", "split", "loss", "accuracy")
EVAL_CHUNK = 64


@dataclass
class TrainResult:
    model: VisionClassifier
    history: list[dict] = field(default_factory=list)
    encoder_frozen: bool = True
    steps: int = 0

    def final(self, split: str) -> dict:
        rows = [r for r in self.history if r["split"] == split]
        if not rows:
            raise ContractError(f"no {split} rows in history")
        return rows[-1]


def metrics_csv(history: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(METRICS_HEADER)
    for r in history:
        writer.writerow([r["epoch"], r["step"], r["split"], repr(float(r["loss"])), repr(float(r["accuracy"]))])
    return buf.getvalue()


def _inputs(model: VisionClassifier, images: np.ndarray) -> np.ndarray:
    """What the trainable part consumes: frozen latents for ci2p variants, pixels otherwise."""
    if model.codec is None:
        return images
    out = []
    for i in range(0, len(images), EVAL_CHUNK):
        out.append(model.latent(Tensor(images[i:i + EVAL_CHUNK])).data)
    return np.concatenate(out) if out else images[:0]


def _logits(model: VisionClassifier, batch: np.ndarray) -> Tensor:
    x = Tensor(batch)
    if model.codec is None:
        return model.forward_tokens(model.embed(x))
    return model.forward_latent(x)


def predict_logits(model: VisionClassifier, images: np.ndarray, cached: np.ndarray | None = None) -> np.ndarray:
    inputs = _inputs(model, images) if cached is None else cached
    out = []
    with no_grad():
        for i in range(0, len(inputs), EVAL_CHUNK):
            out.append(_logits(model, inputs[i:i + EVAL_CHUNK]).data)
    return np.concatenate(out)


def top1(logits: np.ndarray, labels: np.ndarray) -> float:
    """Fraction with ``argmax == label``; ties resolve to the lowest class index."""
    if len(labels) == 0:
        return 0.0
    return float(np.mean(np.argmax(logits, axis=-1) == np.asarray(labels)))


def evaluate(model: VisionClassifier, dataset: Dataset, cached: np.ndarray | None = None) -> float:
    return top1(predict_logits(model, dataset.images, cached), dataset.labels)


def _mean_ce(logits: np.ndarray, labels: np.ndarray) -> float:
    if len(labels) == 0:
        return 0.0
    z = logits.astype(np.float64)
    z = z - z.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    return float(-logp[np.arange(len(labels)), labels].mean())


def train_classifier(desc: ModelDesc, codec: CodecModel | None, data: Splits, cfg: TrainConfig,
                     out_dir=None, model: VisionClassifier | None = None,
                     max_steps: int | None = None) -> TrainResult:
    """Adam + cross-entropy with seeded shuffling and flip augmentation.

    One ``train`` and one ``val`` metrics row per epoch. When ``out_dir`` is
    given, ``metrics.csv`` and ``model.ckpt`` are rewritten after every
    epoch. ``max_steps`` stops early (used by short audits). Raises
    ContractError if the codec encoder changed during training.
    """
    cfg.validate()
    if model is None:
        model, _ = build_model(desc, codec, seed=cfg.seed)
    store = model.store
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "model.cfg").write_text(desc.to_config())
    result = TrainResult(model)
    if cfg.epochs == 0:
        return result

    encoder_before = store.snapshot("codec.")
    rng = Rng(cfg.seed)
    shuffle_rng, flip_rng = rng.spawn("shuffle"), rng.spawn("flip")
    train, val = data
    dtype = get_default_dtype()
    # the encoder is frozen, so latents for both orientations are computed once
    plain = _inputs(model, train.images.astype(dtype))
    mirrored = _inputs(model, np.ascontiguousarray(train.images[..., ::-1]).astype(dtype))
    val_inputs = _inputs(model, val.images.astype(dtype))
    labels = train.labels
    n = len(train)
    steps_per_epoch = math.ceil(n / cfg.batch_size)
    total_steps = steps_per_epoch * cfg.epochs
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        order = shuffle_rng.permutation(n)
        losses, weights = [], []
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            flips = np.array([flip_rng.bernoulli(cfg.flip_prob) for _ in idx], dtype=bool)
            batch = np.where(flips[:, None, None, None], mirrored[idx], plain[idx])
            step += 1
            try:
                loss = cross_entropy(_logits(model, batch), labels[idx])
                value = loss.item()
                if not math.isfinite(value):
                    raise NonFiniteError("loss is not finite")
                loss.backward()
            except NonFiniteError as exc:
                raise NonFiniteError(f"non-finite training loss at epoch {epoch}, step {step}: {exc}") from exc
            adam_step(store, cfg.lr_at(step, total_steps), cfg.beta1, cfg.beta2, cfg.eps, t=step)
            losses.append(value)
            weights.append(len(idx))
            if max_steps is not None and step >= max_steps:
                break
        train_logits = predict_logits(model, train.images, plain)
        val_logits = predict_logits(model, val.images, val_inputs)
        result.history.append({"epoch": epoch, "step": step, "split": "train",
                               "loss": float(np.average(losses, weights=weights)),
                               "accuracy": top1(train_logits, labels)})
        result.history.append({"epoch": epoch, "step": step, "split": "val",
                               "loss": _mean_ce(val_logits, val.labels),
                               "accuracy": top1(val_logits, val.labels)})
        if out is not None:
            (out / "metrics.csv").write_text(metrics_csv(result.history))
            save_checkpoint(store, out / "model.ckpt")
        if max_steps is not None and step >= max_steps:
            break
    result.steps = step
    result.encoder_frozen = encoder_audit(store, encoder_before)
    if not result.encoder_frozen:
        raise ContractError("frozen codec encoder changed during classifier training")
    return result


def encoder_audit(store, before: dict[str, np.ndarray]) -> bool:
    """Bit-compare the current ``codec.*`` parameters against a snapshot."""
    after = store.snapshot("codec.")
    if after.keys() != before.keys():
        return False
    return all(a.dtype == before[k].dtype and a.tobytes() == before[k].tobytes() for k, a in after.items())


def random_frozen_codec(desc: ModelDesc, seed: int) -> CodecModel:
    """Untrained codec used as a frozen encoder; the ablation control."""
    codec = CodecModel(desc.codec_hidden, desc.codec_latent, seed=seed)
    codec.freeze_encoder()
    return codec
