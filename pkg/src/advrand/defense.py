"""Inference-time randomization: random resize, random zero padding, colour jitter.

A *pattern* is one concrete draw of the randomization (resize side, pad
offsets, optional flip and colour factors).  The geometric part of a
pattern is differentiable, so an attacker can target fixed patterns.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable, Iterator

import numpy as np

from . import tensor as T
from .classifier import ModelWeights, forward_logits
from .errors import ContractError
from .tensor import Tensor

BRIGHTNESS_MAX = 32.0 / 255.0
SATURATION_RANGE = (0.5, 1.5)
HUE_MAX = 0.2
CONTRAST_RANGE = (0.5, 1.5)


@dataclass(frozen=True)
class ColorJitter:
    """Which colour randomizations are enabled, with their sampling ranges."""

    brightness: float | None = None
    saturation: tuple[float, float] | None = None
    hue: float | None = None
    contrast: tuple[float, float] | None = None

    @classmethod
    def standard(cls, *which: str) -> "ColorJitter":
        """Enable the named jitters (``brightness``, ``saturation``, ``hue``,
        ``contrast``) at their standard ranges; no names enables all four."""
        defaults = {
            "brightness": BRIGHTNESS_MAX, "saturation": SATURATION_RANGE,
            "hue": HUE_MAX, "contrast": CONTRAST_RANGE,
        }
        which = which or tuple(defaults)
        unknown = set(which) - set(defaults)
        if unknown:
            raise ContractError(f"unknown colour jitter {sorted(unknown)}")
        return cls(**{name: defaults[name] for name in which})

    @property
    def enabled(self) -> bool:
        return any(v is not None for v in (self.brightness, self.saturation, self.hue, self.contrast))


@dataclass(frozen=True)
class RandomizationParams:
    base_side: int = 28
    resize_min: int = 28
    resize_max_exclusive: int = 36
    pad_target: int = 36
    flip_prob: float = 0.0
    jitter: ColorJitter | None = None

    def __post_init__(self):
        lo, hi, t = self.resize_min, self.resize_max_exclusive, self.pad_target
        if min(self.base_side, lo, hi, t) < 1:
            raise ContractError("sides must be positive")
        if not lo <= hi - 1 <= t:
            raise ContractError(f"need resize_min <= resize_max_exclusive - 1 <= pad_target, got {lo}, {hi}, {t}")
        if not 0.0 <= self.flip_prob <= 1.0:
            raise ContractError(f"flip_prob must lie in [0, 1], got {self.flip_prob}")

    @classmethod
    def desk(cls, base_side: int = 28, growth: int = 8, **kw) -> "RandomizationParams":
        """Resize into ``[B, B + growth)`` and pad to ``B + growth``."""
        return cls(base_side, base_side, base_side + growth, base_side + growth, **kw)

    @classmethod
    def identity(cls, base_side: int = 28, **kw) -> "RandomizationParams":
        """No geometric randomization; useful with colour jitter alone."""
        return cls(base_side, base_side, base_side + 1, base_side, **kw)

    def to_dict(self) -> dict:
        out = {
            "base_side": self.base_side, "resize_min": self.resize_min,
            "resize_max_exclusive": self.resize_max_exclusive, "pad_target": self.pad_target,
            "flip_prob": self.flip_prob,
        }
        if self.jitter is not None:
            out["jitter"] = {
                k: (list(v) if isinstance(v, tuple) else v)
                for k, v in vars(self.jitter).items() if v is not None
            }
        return out


@dataclass(frozen=True)
class PatternSpec:
    resize_to: int
    pad_left: int
    pad_top: int
    flip: bool = False
    brightness: float | None = None
    saturation: float | None = None
    hue: float | None = None
    contrast: float | None = None

    def fits(self, target: int) -> bool:
        return (
            self.resize_to >= 1 and self.pad_left >= 0 and self.pad_top >= 0
            and self.resize_to + self.pad_left <= target and self.resize_to + self.pad_top <= target
        )

    @property
    def has_color(self) -> bool:
        return any(v is not None for v in (self.brightness, self.saturation, self.hue, self.contrast))

    def geometric(self) -> "PatternSpec":
        return replace(self, brightness=None, saturation=None, hue=None, contrast=None)


def count_patterns(params: RandomizationParams) -> int:
    """Number of distinct (resize, left, top) triples the defense can draw."""
    t = params.pad_target
    return sum((t - r + 1) ** 2 for r in range(params.resize_min, params.resize_max_exclusive))


def enumerate_patterns(params: RandomizationParams) -> Iterator[PatternSpec]:
    t = params.pad_target
    for r in range(params.resize_min, params.resize_max_exclusive):
        for top in range(t - r + 1):
            for left in range(t - r + 1):
                yield PatternSpec(r, left, top)


def sample_pattern(params: RandomizationParams, rng: np.random.Generator) -> PatternSpec:
    """Draw one pattern; every field comes from ``rng`` in a fixed order."""
    t = params.pad_target
    r = int(rng.integers(params.resize_min, params.resize_max_exclusive))
    left = int(rng.integers(0, t - r + 1))
    top = int(rng.integers(0, t - r + 1))
    flip = bool(rng.random() < params.flip_prob) if params.flip_prob > 0 else False
    spec = PatternSpec(r, left, top, flip)
    j = params.jitter
    if j is not None:
        colour = {}
        if j.brightness is not None:
            colour["brightness"] = float(rng.uniform(-j.brightness, j.brightness))
        if j.saturation is not None:
            colour["saturation"] = float(rng.uniform(*j.saturation))
        if j.hue is not None:
            colour["hue"] = float(rng.uniform(-j.hue, j.hue))
        if j.contrast is not None:
            colour["contrast"] = float(rng.uniform(*j.contrast))
        spec = replace(spec, **colour)
    return spec


# ---------------------------------------------------------------- colour


def rgb_to_hsv(rgb: np.ndarray) -> np.ndarray:
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    v = rgb.max(axis=-1)
    c = v - rgb.min(axis=-1)
    s = np.where(v > 0, c / np.where(v > 0, v, 1.0), 0.0)
    safe = np.where(c > 0, c, 1.0)
    h = np.where(
        v == r, ((g - b) / safe) % 6.0,
        np.where(v == g, (b - r) / safe + 2.0, (r - g) / safe + 4.0),
    )
    h = np.where(c > 0, h / 6.0, 0.0)
    return np.stack([h, s, v], axis=-1)


def hsv_to_rgb(hsv: np.ndarray) -> np.ndarray:
    h, s, v = hsv[..., 0], hsv[..., 1], hsv[..., 2]
    h6 = (h % 1.0) * 6.0
    sector = np.floor(h6).astype(np.int64) % 6
    f = h6 - np.floor(h6)
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    choices = [
        np.stack(c, axis=-1)
        for c in ((v, t, p), (q, v, p), (p, v, t), (p, q, v), (t, p, v), (v, p, q))
    ]
    out = np.zeros(hsv.shape)
    for k in range(6):
        out = np.where((sector == k)[..., None], choices[k], out)
    return out


def _need_rgb(image: np.ndarray, what: str):
    if image.shape[-1] != 3:
        raise ContractError(f"{what} needs 3 channels, image has {image.shape[-1]}")


def adjust_brightness(image: np.ndarray, delta: float) -> np.ndarray:
    return np.clip(np.asarray(image, dtype=np.float64) + delta, 0.0, 1.0)


def adjust_contrast(image: np.ndarray, factor: float) -> np.ndarray:
    """Scale deviations from each channel's spatial mean by ``factor``."""
    image = np.asarray(image, dtype=np.float64)
    m = image.mean(axis=(-3, -2), keepdims=True)
    return np.clip(m + factor * (image - m), 0.0, 1.0)


def adjust_saturation(image: np.ndarray, factor: float) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    _need_rgb(image, "saturation")
    hsv = rgb_to_hsv(image)
    hsv[..., 1] = np.clip(hsv[..., 1] * factor, 0.0, 1.0)
    return np.clip(hsv_to_rgb(hsv), 0.0, 1.0)


def adjust_hue(image: np.ndarray, delta: float) -> np.ndarray:
    """Rotate hue by ``delta`` turns (1.0 is a full cycle)."""
    image = np.asarray(image, dtype=np.float64)
    _need_rgb(image, "hue")
    hsv = rgb_to_hsv(image)
    hsv[..., 0] = (hsv[..., 0] + delta) % 1.0
    return np.clip(hsv_to_rgb(hsv), 0.0, 1.0)


def _apply_color(image: np.ndarray, spec: PatternSpec) -> np.ndarray:
    if spec.brightness is not None:
        image = adjust_brightness(image, spec.brightness)
    if spec.saturation is not None:
        image = adjust_saturation(image, spec.saturation)
    if spec.hue is not None:
        image = adjust_hue(image, spec.hue)
    if spec.contrast is not None:
        image = adjust_contrast(image, spec.contrast)
    return image


# ---------------------------------------------------------------- application


def apply_patterns(image, specs: Iterable[PatternSpec], target: int) -> Tensor:
    """Geometric part of several patterns applied to one image: ``(P, T, T, C)``.

    Differentiable with respect to ``image``.  Colour factors are rejected;
    use :func:`apply_pattern` for those.
    """
    x = image if isinstance(image, Tensor) else Tensor(image)
    specs = list(specs)
    if not specs:
        raise ContractError("no patterns given")
    for s in specs:
        if s.has_color:
            raise ContractError("colour jitter is not differentiable; use apply_pattern")
        if not s.fits(target):
            raise ContractError(f"{s} does not fit a {target}x{target} canvas")
    return T.pattern_stack(
        x, [s.resize_to for s in specs], [s.pad_left for s in specs],
        [s.pad_top for s in specs], [s.flip for s in specs], target,
    )


def apply_pattern(image, spec: PatternSpec, target: int) -> Tensor:
    """Flip, resize to ``spec.resize_to``, zero-pad to ``target``, colour-jitter, clip.

    The geometric stages are differentiable.  Colour jitter is applied on
    values only, so it is refused for an input that requires gradients.
    """
    x = image if isinstance(image, Tensor) else Tensor(image)
    if x.ndim != 3:
        raise ContractError(f"image must be (H, W, C), got {x.shape}")
    if not spec.fits(target):
        raise ContractError(f"{spec} does not fit a {target}x{target} canvas")
    geo = spec.geometric()
    if geo == PatternSpec(x.shape[0], 0, 0) and x.shape[0] == x.shape[1] == target:
        out = x
    else:
        out = T.reshape(apply_patterns(x, [geo], target), (target, target, x.shape[2]))
    if spec.has_color:
        if x.requires_grad:
            raise ContractError("colour jitter is not differentiable")
        out = Tensor(_apply_color(out.data, spec))
    return T.clamp(out, 0.0, 1.0)


def randomized_predict(
    weights: ModelWeights,
    image,
    params: RandomizationParams,
    n_iterations: int,
    rng: np.random.Generator,
) -> tuple[int, np.ndarray]:
    """Average softmax over ``n_iterations`` random patterns.

    Returns the arg-max class (lowest index on ties) and the mean
    probability vector.
    """
    if n_iterations < 1:
        raise ContractError("n_iterations must be at least 1")
    image = image.data if isinstance(image, Tensor) else np.asarray(image, dtype=np.float64)
    canvases = np.stack([
        apply_pattern(image, sample_pattern(params, rng), params.pad_target).data
        for _ in range(n_iterations)
    ])
    probs = T.softmax(forward_logits(weights, Tensor(canvases)).data)
    mean = probs.mean(axis=0)
    return int(np.argmax(mean)), mean
