"""Seeded image preprocessing and augmentation pipeline.

Training images pass through a fixed sequence: resize, rescale to [0, 1],
rotate, shift, shear, horizontal flip, then a fill of any exposed pixels.
The geometric steps are composed into a single affine warp (one resampling
pass) applied by inverse mapping with bilinear interpolation. Validation and
test images are only resized and rescaled.

Every random draw derives from ``hash(seed, epoch, record digest, occurrence)``
so a stream is reproducible regardless of how iteration is parallelized.
"""

from __future__ import annotations

import hashlib
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np
from PIL import Image, UnidentifiedImageError

from .data import ClassLabel, DatasetManifest

FILL_MODES = ("nearest", "reflect", "constant")


class DecodeError(Exception):
    """Input bytes or file could not be decoded as an image."""


class ShapeError(Exception):
    """Image has zero area or an unusable shape."""


class StreamError(Exception):
    """Batch stream cannot be constructed (e.g. empty split)."""


@dataclass(frozen=True)
class AugmentConfig:
    """Parameters of the six-step preprocessing/augmentation pipeline."""

    rescale_factor: float = 1.0 / 255.0
    rotation_max_deg: float = 20.0
    shift_fraction: float = 0.2
    shear_fraction: float = 0.2
    horizontal_flip: bool = True
    fill_mode: str = "nearest"
    target_size: tuple[int, int] = (150, 150)
    seed: int = 0

    def __post_init__(self):
        if self.rescale_factor <= 0:
            raise ValueError("rescale_factor must be positive")
        if not (0.0 <= self.rotation_max_deg <= 180.0):
            raise ValueError("rotation_max_deg must lie in [0, 180]")
        if not (0.0 <= self.shift_fraction < 1.0):
            raise ValueError("shift_fraction must lie in [0, 1)")
        if self.shear_fraction < 0.0:
            raise ValueError("shear_fraction must be nonnegative")
        if self.fill_mode not in FILL_MODES:
            raise ValueError(f"fill_mode must be one of {FILL_MODES}")
        if len(self.target_size) != 2 or any(int(s) <= 0 for s in self.target_size):
            raise ValueError("target_size must be two positive integers")

    def to_text(self) -> str:
        """Flat key=value block, one field per line."""
        return "\n".join(
            [
                f"rescale_factor={self.rescale_factor!r}",
                f"rotation_max_deg={self.rotation_max_deg!r}",
                f"shift_fraction={self.shift_fraction!r}",
                f"shear_fraction={self.shear_fraction!r}",
                f"horizontal_flip={int(self.horizontal_flip)}",
                f"fill_mode={self.fill_mode}",
                f"target_size={self.target_size[0]}x{self.target_size[1]}",
                f"seed={self.seed}",
            ]
        )

    @classmethod
    def from_text(cls, text: str) -> "AugmentConfig":
        kv = {}
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            kv[key.strip()] = value.strip()
        h, w = kv["target_size"].split("x")
        return cls(
            rescale_factor=float(kv["rescale_factor"]),
            rotation_max_deg=float(kv["rotation_max_deg"]),
            shift_fraction=float(kv["shift_fraction"]),
            shear_fraction=float(kv["shear_fraction"]),
            horizontal_flip=bool(int(kv["horizontal_flip"])),
            fill_mode=kv["fill_mode"],
            target_size=(int(h), int(w)),
            seed=int(kv["seed"]),
        )


@dataclass(frozen=True)
class Draw:
    """One sampled set of augmentation parameters for a single image."""

    rotation_deg: float = 0.0
    shift_x: float = 0.0  # fraction of width, in [-shift_fraction, +shift_fraction]
    shift_y: float = 0.0  # fraction of height
    shear: float = 0.0  # horizontal shear coefficient, in [0, shear_fraction]
    flip: bool = False

    def is_identity(self) -> bool:
        return (
            self.rotation_deg == 0.0
            and self.shift_x == 0.0
            and self.shift_y == 0.0
            and self.shear == 0.0
            and not self.flip
        )


IDENTITY_DRAW = Draw()


@dataclass
class AugmentedBatch:
    pixels: np.ndarray  # (batch, height, width, 3) float32 in [0, 1]
    labels: np.ndarray  # (batch, 3) one-hot float32
    epoch_index: int
    draw_log: tuple[Draw, ...]


def decode_image(source: str | Path | bytes) -> np.ndarray:
    """Decode a path or raw bytes into an (H, W, 3) uint8 RGB array.

    Grayscale inputs are replicated across the three channels.
    """
    try:
        if isinstance(source, bytes):
            img = Image.open(io.BytesIO(source))
        else:
            img = Image.open(source)
        img.load()
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise DecodeError(f"cannot decode image: {exc}") from exc
    if img.width == 0 or img.height == 0:
        raise ShapeError("image has zero area")
    return np.asarray(img.convert("RGB"), dtype=np.uint8)


def _resize(raster: np.ndarray, target_size: tuple[int, int]) -> np.ndarray:
    """Bilinear resize of a uint8 RGB raster to (height, width)."""
    if raster.ndim != 3 or raster.shape[2] != 3:
        raise ShapeError(f"expected (H, W, 3) raster, got shape {raster.shape}")
    if raster.shape[0] == 0 or raster.shape[1] == 0:
        raise ShapeError("image has zero area")
    h, w = int(target_size[0]), int(target_size[1])
    if raster.shape[:2] == (h, w):
        return raster
    img = Image.fromarray(raster, mode="RGB")
    return np.asarray(img.resize((w, h), Image.BILINEAR), dtype=np.uint8)


def _affine_matrix(draw: Draw, height: int, width: int) -> np.ndarray:
    """Forward pixel-coordinate map for rotate -> shift -> shear -> flip, about the image center."""
    cx, cy = (width - 1) / 2.0, (height - 1) / 2.0

    def centered(m2: np.ndarray, tx: float = 0.0, ty: float = 0.0) -> np.ndarray:
        m = np.eye(3)
        m[:2, :2] = m2
        m[0, 2] = cx - m2[0, 0] * cx - m2[0, 1] * cy + tx
        m[1, 2] = cy - m2[1, 0] * cx - m2[1, 1] * cy + ty
        return m

    # positive angles rotate content counterclockwise in the (row, col) view
    theta = np.deg2rad(draw.rotation_deg)
    rotate = centered(np.array([[np.cos(theta), np.sin(theta)], [-np.sin(theta), np.cos(theta)]]))
    shift = centered(np.eye(2), tx=draw.shift_x * width, ty=draw.shift_y * height)
    shear = centered(np.array([[1.0, draw.shear], [0.0, 1.0]]))
    flip = centered(np.array([[-1.0, 0.0], [0.0, 1.0]])) if draw.flip else np.eye(3)
    # applied in order: rotate first, flip last
    return flip @ shear @ shift @ rotate


def _warp(pixels: np.ndarray, matrix: np.ndarray, fill_mode: str) -> np.ndarray:
    """Inverse-map ``pixels`` through the forward affine ``matrix`` with bilinear sampling."""
    h, w = pixels.shape[:2]
    inv = np.linalg.inv(matrix)
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    src_x = inv[0, 0] * xs + inv[0, 1] * ys + inv[0, 2]
    src_y = inv[1, 0] * xs + inv[1, 1] * ys + inv[1, 2]

    x0 = np.floor(src_x)
    y0 = np.floor(src_y)
    wx = (src_x - x0).astype(pixels.dtype)
    wy = (src_y - y0).astype(pixels.dtype)
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)

    def fold(idx: np.ndarray, size: int) -> np.ndarray:
        if fill_mode == "reflect":
            # symmetric reflection including the edge sample: a b c d -> d c b a
            m = np.mod(idx, 2 * size)
            return np.where(m < size, m, 2 * size - 1 - m)
        return np.clip(idx, 0, size - 1)

    taps = []
    for dy in (0, 1):
        for dx in (0, 1):
            gx = fold(x0 + dx, w)
            gy = fold(y0 + dy, h)
            val = pixels[gy, gx]
            if fill_mode == "constant":
                inside = ((0 <= x0 + dx) & (x0 + dx < w) & (0 <= y0 + dy) & (y0 + dy < h))
                val = val * inside[..., None].astype(pixels.dtype)
            weight = (wy if dy else 1 - wy) * (wx if dx else 1 - wx)
            taps.append(val * weight[..., None])
    return taps[0] + taps[1] + taps[2] + taps[3]


def transform_image(raster: np.ndarray, config: AugmentConfig, draw: Draw) -> np.ndarray:
    """Apply the full pipeline to a decoded uint8 raster; returns float32 in [0, 1]."""
    if abs(draw.rotation_deg) > config.rotation_max_deg:
        raise ValueError("draw rotation exceeds config bound")
    if max(abs(draw.shift_x), abs(draw.shift_y)) > config.shift_fraction:
        raise ValueError("draw shift exceeds config bound")
    if not (0.0 <= draw.shear <= config.shear_fraction):
        raise ValueError("draw shear outside config bound")

    resized = _resize(raster, config.target_size)
    pixels = np.clip(resized.astype(np.float32) * config.rescale_factor, 0.0, 1.0)
    if draw.is_identity():
        return pixels
    h, w = pixels.shape[:2]
    warped = _warp(pixels, _affine_matrix(draw, h, w), config.fill_mode)
    return np.clip(warped, 0.0, 1.0).astype(np.float32)


def _draw_seed(seed: int, epoch: int, digest: str, occurrence: int) -> int:
    material = f"{seed}|{epoch}|{digest}|{occurrence}".encode()
    return int.from_bytes(hashlib.sha256(material).digest()[:8], "big")


def draw_for(config: AugmentConfig, epoch: int, digest: str, occurrence: int = 0) -> Draw:
    """Sample the augmentation parameters for one image in one epoch.

    ``occurrence`` distinguishes duplicate records (oversampled copies of the
    same file) so each copy still gets an independent draw.
    """
    rng = np.random.default_rng(_draw_seed(config.seed, epoch, digest, occurrence))
    rotation = rng.uniform(-config.rotation_max_deg, config.rotation_max_deg)
    shift_x = rng.uniform(-config.shift_fraction, config.shift_fraction)
    shift_y = rng.uniform(-config.shift_fraction, config.shift_fraction)
    shear = rng.uniform(0.0, config.shear_fraction)
    flip = bool(rng.integers(0, 2)) if config.horizontal_flip else False
    return Draw(rotation_deg=rotation, shift_x=shift_x, shift_y=shift_y, shear=shear, flip=flip)


def _one_hot(label: ClassLabel) -> np.ndarray:
    row = np.zeros(3, dtype=np.float32)
    row[int(label)] = 1.0
    return row


def batch_stream(
    manifest: DatasetManifest,
    split: str,
    config: AugmentConfig,
    batch_size: int,
    epochs: int = 1,
) -> Iterator[AugmentedBatch]:
    """Yield augmented batches over ``split`` for the given number of epochs.

    The train split is reshuffled (seeded) and redrawn every epoch; validation
    and test splits are only resized and rescaled, in manifest order, so
    repeated iteration yields identical tensors.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    records = manifest.split_records(split)
    if not records:
        raise StreamError(f"split {split!r} is empty")

    augmenting = split == "train"
    occurrences = []
    seen: dict[str, int] = {}
    for rec in records:
        occurrences.append(seen.get(rec.byte_digest, 0))
        seen[rec.byte_digest] = occurrences[-1] + 1

    for epoch in range(epochs):
        if augmenting:
            order = _epoch_order(config.seed, epoch, len(records))
        else:
            order = np.arange(len(records))
        for start in range(0, len(records), batch_size):
            chunk = order[start:start + batch_size]
            pixels, labels, draws = [], [], []
            for k in chunk:
                rec = records[int(k)]
                if augmenting:
                    draw = draw_for(config, epoch, rec.byte_digest, occurrences[int(k)])
                else:
                    draw = IDENTITY_DRAW
                pixels.append(transform_image(decode_image(rec.path), config, draw))
                labels.append(_one_hot(rec.label))
                draws.append(draw)
            yield AugmentedBatch(
                pixels=np.stack(pixels),
                labels=np.stack(labels),
                epoch_index=epoch,
                draw_log=tuple(draws),
            )


def _epoch_order(seed: int, epoch: int, n: int) -> np.ndarray:
    material = f"{seed}|{epoch}|shuffle".encode()
    rng = np.random.default_rng(int.from_bytes(hashlib.sha256(material).digest()[:8], "big"))
    return rng.permutation(n)


def preprocess_for_inference(raster: np.ndarray, target_size: tuple[int, int], rescale_factor: float) -> np.ndarray:
    """Resize + rescale only, matching a trained model's preprocessing contract."""
    resized = _resize(raster, target_size)
    return np.clip(resized.astype(np.float32) * rescale_factor, 0.0, 1.0)
