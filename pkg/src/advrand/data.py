"""Labelled image sets and the bundled procedural dataset.

The synthetic set has ten classes of parametric patterns (oriented stripes,
checkerboards, dots, disks, rings, crosses) drawn on a dark noisy
background.  Position, size, spatial frequency, contrast and, for colour
sets, hue all vary per image so the class is carried by local structure
rather than by any single pixel.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError

CLASS_NAMES = (
    "hstripes", "vstripes", "diag_up", "diag_down", "checker",
    "disk", "ring", "plus", "dots", "cross",
)
CONTRAST = (0.2, 0.5)
NOISE = (0.005, 0.03)


@dataclass
class LabeledDataset:
    """Images ``(N, H, W, C)`` in [0, 1] with integer labels."""

    images: np.ndarray
    labels: np.ndarray
    split: str = "test"
    num_classes: int = 10
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4:
            raise ContractError(f"images must be (N, H, W, C), got {self.images.shape}")
        if len(self.images) != len(self.labels):
            raise ContractError("image and label counts differ")
        if self.images.size and (self.images.min() < 0.0 or self.images.max() > 1.0):
            raise ContractError("image values must lie in [0, 1]")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ContractError(f"labels must lie in [0, {self.num_classes})")

    def __len__(self):
        return len(self.labels)

    @property
    def side(self) -> int:
        return self.images.shape[1]

    @property
    def channels(self) -> int:
        return self.images.shape[3]

    def subset(self, index) -> "LabeledDataset":
        index = np.asarray(index, dtype=np.int64)
        return LabeledDataset(
            self.images[index], self.labels[index], self.split, self.num_classes, dict(self.meta)
        )


def _stripes(yy, xx, angle, period, phase, duty):
    coord = xx * np.cos(angle) + yy * np.sin(angle)
    return (((coord + phase) / period) % 1.0 < duty).astype(np.float64)


def _pattern(label: int, side: int, rng: np.random.Generator) -> np.ndarray:
    yy, xx = np.mgrid[0:side, 0:side].astype(np.float64)
    # a randomly placed region holding textured classes
    size = rng.uniform(0.55, 0.9) * side
    cy = rng.uniform(size / 2, side - size / 2)
    cx = rng.uniform(size / 2, side - size / 2)
    region = (np.abs(yy - cy) <= size / 2) & (np.abs(xx - cx) <= size / 2)
    period = rng.uniform(3.5, 9.0)
    phase = rng.uniform(0, period)
    jitter = rng.normal(0.0, 0.12)
    if label == 0:
        m = _stripes(yy, xx, np.pi / 2 + jitter, period, phase, 0.5) * region
    elif label == 1:
        m = _stripes(yy, xx, jitter, period, phase, 0.5) * region
    elif label == 2:
        m = _stripes(yy, xx, np.pi / 4 + jitter, period, phase, 0.5) * region
    elif label == 3:
        m = _stripes(yy, xx, -np.pi / 4 + jitter, period, phase, 0.5) * region
    elif label == 4:
        cell = rng.uniform(2.5, 5.0)
        m = ((np.floor((xx + phase) / cell) + np.floor((yy + phase) / cell)) % 2 == 0) * region
    elif label == 8:
        gap = rng.uniform(4.0, 8.0)
        r = rng.uniform(0.8, 1.8)
        dy = ((yy + phase) % gap) - gap / 2
        dx = ((xx + phase) % gap) - gap / 2
        m = (dy * dy + dx * dx <= r * r) * region
    else:
        radius = rng.uniform(0.22, 0.42) * side
        cy = rng.uniform(radius, side - radius)
        cx = rng.uniform(radius, side - radius)
        dist = np.hypot(yy - cy, xx - cx)
        thick = rng.uniform(1.4, 3.2)
        if label == 5:
            m = dist <= radius
        elif label == 6:
            m = np.abs(dist - radius) <= thick / 2
        else:
            ang = rng.uniform(-0.15, 0.15) + (np.pi / 4 if label == 9 else 0.0)
            u = (xx - cx) * np.cos(ang) + (yy - cy) * np.sin(ang)
            v = -(xx - cx) * np.sin(ang) + (yy - cy) * np.cos(ang)
            arm = radius * 1.1
            m = ((np.abs(u) <= thick) & (np.abs(v) <= arm)) | ((np.abs(v) <= thick) & (np.abs(u) <= arm))
        m = m.astype(np.float64)
    return m


def make_image(label: int, side: int, channels: int, rng: np.random.Generator) -> np.ndarray:
    mask = _pattern(label, side, rng)
    background = rng.uniform(0.0, 0.08)
    contrast = rng.uniform(*CONTRAST)
    if channels == 1:
        colour = np.array([contrast])
    else:
        hue = rng.uniform(0.0, 1.0)
        sat = rng.uniform(0.5, 1.0)
        colour = contrast * _hsv_to_rgb(hue, sat, 1.0)
        colour = np.resize(colour, channels)
    img = background + mask[..., None] * colour[None, None, :]
    img = img + rng.normal(0.0, rng.uniform(*NOISE), size=img.shape)
    return np.clip(img, 0.0, 1.0)


def _hsv_to_rgb(h, s, v):
    import colorsys

    return np.array(colorsys.hsv_to_rgb(h, s, v))


def make_synthetic(
    n_train: int = 8000,
    n_test: int = 2000,
    side: int = 28,
    channels: int = 1,
    seed: int = 0,
    num_classes: int = 10,
) -> tuple[LabeledDataset, LabeledDataset]:
    """Generate balanced train and test splits from one seed.

    Labels cycle through the classes, then each split is shuffled, so every
    class appears ``n // num_classes`` times (give or take one).
    """
    if not 1 <= num_classes <= len(CLASS_NAMES):
        raise ContractError(f"num_classes must be in [1, {len(CLASS_NAMES)}]")
    train_rng, test_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(2))
    out = []
    for split, n, rng in (("train", n_train, train_rng), ("test", n_test, test_rng)):
        labels = rng.permutation(np.arange(n) % num_classes)
        images = np.empty((n, side, side, channels))
        for i, lab in enumerate(labels):
            images[i] = make_image(int(lab), side, channels, rng)
        meta = {"generator": "synthetic", "seed": int(seed), "side": side, "channels": channels}
        out.append(LabeledDataset(images, labels, split, num_classes, meta))
    return out[0], out[1]
