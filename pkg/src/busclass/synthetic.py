"""Procedural texture fixtures for desk-scale runs without the real dataset.

Three visually distinct texture families stand in for the three tumor
classes: smooth low-frequency blobs, near-vertical sinusoidal stripes, and
high-frequency binary speckle. The families differ strongly in their spatial
frequency content, so a frozen feature extractor separates them within a few
epochs while rotation/shift/shear/flip augmentation keeps the task honest.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .data import CLASS_NAMES


def _box_smooth(img: np.ndarray, k: int) -> np.ndarray:
    pad = np.pad(img, k, mode="reflect")
    acc = np.zeros_like(img)
    taps = 0
    for dy in range(0, 2 * k + 1, max(1, k // 2)):
        for dx in range(0, 2 * k + 1, max(1, k // 2)):
            acc = acc + pad[dy:dy + img.shape[0], dx:dx + img.shape[1]]
            taps += 1
    return acc / taps


def _blobs(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    coarse = rng.random((5, 5))
    img = np.kron(coarse, np.ones((h // 5 + 1, w // 5 + 1)))[:h, :w]
    return _box_smooth(img, 12)


def _stripes(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    theta = np.deg2rad(rng.uniform(-8.0, 8.0))  # near-vertical; stays <45 deg under rotation
    period = rng.uniform(7.0, 11.0)
    phase = rng.uniform(0.0, 2.0 * np.pi)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    return 0.5 + 0.5 * np.sin(2.0 * np.pi * (xx * np.cos(theta) + yy * np.sin(theta)) / period + phase)


def _speckle(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    cell = int(rng.integers(2, 4))
    noise = (rng.random((h // cell + 1, w // cell + 1)) > 0.5).astype(np.float64)
    return np.kron(noise, np.ones((cell, cell)))[:h, :w]


_FAMILIES = (_blobs, _stripes, _speckle)


def texture_image(class_index: int, rng: np.random.Generator, size: tuple[int, int]) -> np.ndarray:
    """One uint8 grayscale texture of the given class, values roughly in [50, 180]."""
    h, w = size
    img = _FAMILIES[class_index](rng, h, w)
    span = np.ptp(img)
    img = (img - img.min()) / (span if span > 0 else 1.0)
    img = 0.2 + 0.5 * img + rng.normal(0.0, 0.015, img.shape)
    return (np.clip(img, 0.0, 1.0) * 255.0).round().astype(np.uint8)


def generate_fixture(
    root: str | Path,
    per_class: int = 100,
    seed: int = 0,
    size_range: tuple[int, int] = (160, 200),
) -> Path:
    """Write ``per_class`` PNG textures into ``root/{normal,benign,malignant}/``."""
    root = Path(root)
    rng = np.random.default_rng(seed)
    for class_index, name in enumerate(CLASS_NAMES):
        class_dir = root / name
        class_dir.mkdir(parents=True, exist_ok=True)
        for i in range(per_class):
            h = int(rng.integers(size_range[0], size_range[1]))
            w = int(rng.integers(size_range[0], size_range[1]))
            img = texture_image(class_index, rng, (h, w))
            Image.fromarray(img, mode="L").save(class_dir / f"{name} ({i + 1}).png")
    return root
