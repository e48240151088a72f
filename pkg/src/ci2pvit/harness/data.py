"""Datasets: synthetic polygon images, PPM/manifest directories, flip augmentation."""

from __future__ import annotations

import csv
import math
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from ..core.rng import Rng
from ..core.tensor import Tensor
from ..errors import ContractError, DataError

VAL_FRACTION = 0.2


@dataclass
class Dataset:
    """Images ``[n, 3, H, W]`` in [0, 1] with integer labels, one split."""

    images: np.ndarray
    labels: np.ndarray
    class_count: int
    split: str = "train"

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise DataError("images and labels differ in length")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise DataError(f"labels must lie in [0, {self.class_count})")

    def __len__(self) -> int:
        return len(self.labels)

    def __getitem__(self, i: int) -> tuple[Tensor, int]:
        return Tensor(self.images[i]), int(self.labels[i])

    @property
    def items(self) -> list[dict]:
        return [{"image": Tensor(img), "label": int(lbl)} for img, lbl in zip(self.images, self.labels)]

    @property
    def image_size(self) -> tuple[int, int]:
        return tuple(self.images.shape[-2:])


class Splits(NamedTuple):
    train: Dataset
    val: Dataset


# -- synthetic data ---------------------------------------------------------

def _smooth_noise(rng: Rng, size: int, cells: int) -> np.ndarray:
    """Bilinear upsampling of a coarse random grid, values in [0, 1]."""
    coarse = rng.uniform(0.0, 1.0, (3, cells + 1, cells + 1))
    t = np.linspace(0, cells, size, endpoint=False) + 0.5 * cells / size
    i0 = np.floor(t).astype(int)
    f = t - i0
    rows = coarse[:, i0] * (1 - f)[None, :, None] + coarse[:, i0 + 1] * f[None, :, None]
    return rows[:, :, i0] * (1 - f)[None, None, :] + rows[:, :, i0 + 1] * f[None, None, :]


def _polygon_mask(size: int, sides: int, cx: float, cy: float, radius: float, angle: float) -> np.ndarray:
    """Boolean mask of a regular convex polygon, 2x2 supersampled then thresholded."""
    ss = 2
    coords = (np.arange(size * ss) + 0.5) / ss
    yy, xx = np.meshgrid(coords, coords, indexing="ij")
    inside = np.ones_like(xx, dtype=bool)
    verts = [(cx + radius * math.cos(angle + 2 * math.pi * k / sides),
              cy + radius * math.sin(angle + 2 * math.pi * k / sides)) for k in range(sides)]
    for k in range(sides):
        (x0, y0), (x1, y1) = verts[k], verts[(k + 1) % sides]
        inside &= (x1 - x0) * (yy - y0) - (y1 - y0) * (xx - x0) >= 0
    return inside.reshape(size, ss, size, ss).mean(axis=(1, 3)) >= 0.5


def render_polygon(rng: Rng, size: int, sides: int) -> np.ndarray:
    """One ``sides``-gon silhouette at a random pose over a textured background."""
    background = 0.55 * _smooth_noise(rng, size, 4) + 0.15 * rng.uniform(0, 1, (3, size, size))
    radius = size * rng.uniform(0.28, 0.40)
    margin = radius * 0.9
    cx = rng.uniform(margin, size - margin)
    cy = rng.uniform(margin, size - margin)
    angle = rng.uniform(0, 2 * math.pi)
    mask = _polygon_mask(size, sides, float(cx), float(cy), float(radius), float(angle))
    colour = rng.uniform(0.65, 1.0, (3,))
    shade = 0.9 + 0.1 * _smooth_noise(rng, size, 2)
    img = np.where(mask[None], colour[:, None, None] * shade, background)
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def split_of(index: int) -> str:
    """Deterministic hash key used to order items within a class for the split."""
    return f"{zlib.crc32(str(index).encode()):08x}"


def gen_synthetic(classes: int, per_class: int, size: int, seed: int) -> Splits:
    """Class k shows a (k+2)-gon. 20% of each class (lowest index hashes) goes to val."""
    if classes < 2:
        raise ContractError("gen_synthetic needs at least 2 classes")
    if size % 32:
        raise ContractError(f"image size {size} must be a multiple of 32")
    rng = Rng(seed)
    n = classes * per_class
    images = np.empty((n, 3, size, size), dtype=np.float32)
    labels = np.repeat(np.arange(classes), per_class)
    for i in range(n):
        images[i] = render_polygon(rng.spawn(i), size, int(labels[i]) + 2)
    n_val = int(round(per_class * VAL_FRACTION))
    val_idx = []
    for k in range(classes):
        idx = list(range(k * per_class, (k + 1) * per_class))
        idx.sort(key=split_of)
        val_idx.extend(idx[:n_val])
    is_val = np.zeros(n, dtype=bool)
    is_val[val_idx] = True
    return Splits(Dataset(images[~is_val], labels[~is_val], classes, "train"),
                  Dataset(images[is_val], labels[is_val], classes, "val"))


# -- PPM and manifest IO ----------------------------------------------------

def write_ppm(path: Path, image: np.ndarray) -> None:
    """Binary P6, maxval 255, from ``[3, H, W]`` floats in [0, 1]."""
    img = np.asarray(image)
    _, h, w = img.shape
    px = np.clip(np.floor(img * 255.0 + 0.5), 0, 255).astype(np.uint8).transpose(1, 2, 0)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(px.tobytes())


def read_ppm(path: Path) -> np.ndarray:
    """Read a binary P6 file into ``[3, H, W]`` float32 in [0, 1]."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise DataError(f"{path}: cannot read image ({exc})") from exc
    tokens, pos = [], 0
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if pos < len(raw) and raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise DataError(f"{path}: truncated PPM header")
        tokens.append(raw[start:pos])
    pos += 1  # single whitespace byte before the raster
    if tokens[0] != b"P6":
        raise DataError(f"{path}: not a binary PPM (magic {tokens[0]!r})")
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise DataError(f"{path}: malformed PPM header") from exc
    if maxval != 255:
        raise DataError(f"{path}: unsupported PPM maxval {maxval} (only 255 is supported)")
    if w < 1 or h < 1:
        raise DataError(f"{path}: bad PPM dimensions {w}x{h}")
    body = raw[pos:pos + 3 * w * h]
    if len(body) != 3 * w * h:
        raise DataError(f"{path}: PPM raster is truncated")
    px = np.frombuffer(body, dtype=np.uint8).reshape(h, w, 3)
    return (px.transpose(2, 0, 1).astype(np.float32) / 255.0)


def save_dataset(ds: Dataset, directory: Path) -> None:
    directory = Path(directory)
    (directory / "images").mkdir(parents=True, exist_ok=True)
    with open(directory / "manifest.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["path", "label"])
        for i, (img, lbl) in enumerate(zip(ds.images, ds.labels)):
            rel = f"images/{i:05d}.ppm"
            write_ppm(directory / rel, img)
            writer.writerow([rel, int(lbl)])


def load_dataset(directory: Path, split: str | None = None) -> Dataset:
    """Load ``manifest.csv`` (``path,label``) and its P6 images from ``directory``."""
    directory = Path(directory)
    manifest = directory / "manifest.csv"
    if not manifest.is_file():
        raise DataError(f"{manifest}: manifest not found")
    with open(manifest, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:2]] != ["path", "label"]:
            raise DataError(f"{manifest}: header must start with 'path,label'")
        rows = [r for r in reader if r]
    if not rows:
        raise DataError(f"{manifest}: no images listed")
    images, labels, shape = [], [], None
    for r in rows:
        img_path = directory / r[0].strip()
        try:
            label = int(r[1])
        except (IndexError, ValueError) as exc:
            raise DataError(f"{manifest}: bad label for {img_path}") from exc
        if label < 0:
            raise DataError(f"{img_path}: label {label} out of range")
        img = read_ppm(img_path)
        if shape is None:
            shape = img.shape
        elif img.shape != shape:
            raise DataError(f"{img_path}: size {img.shape[1:]} differs from first image {shape[1:]}")
        images.append(img)
        labels.append(label)
    return Dataset(np.stack(images), np.asarray(labels, dtype=np.int64), max(labels) + 1,
                   split or directory.name)


def augment_flip(x, rng: Rng, p: float = 0.5, force: bool | None = None):
    """Horizontal mirror with probability ``p``; ``force`` overrides the draw."""
    if not 0.0 <= p <= 1.0:
        raise ContractError(f"flip probability {p} outside [0, 1]")
    do = rng.bernoulli(p) if force is None else force
    if not do:
        return x
    if isinstance(x, Tensor):
        return Tensor(x.data[..., ::-1], dtype=x.dtype)
    return np.ascontiguousarray(np.asarray(x)[..., ::-1])
