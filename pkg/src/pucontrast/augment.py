"""Stochastic view generation for contrastive pretraining.

Vector transforms (noise, masking, scaling) are the default. Raster
transforms (crop-and-resize, flip, brightness/contrast jitter) work on
rows that are flattened ``(channels, height, width)`` images.
Every transform fires independently per row with probability ``p``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError


def _fires(rng: np.random.Generator, n: int, p: float) -> np.ndarray:
    return rng.random(n) < p


@dataclass(frozen=True)
class GaussianNoise:
    sigma: float = 0.1
    p: float = 1.0
    kind = "noise"

    def apply(self, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        hit = _fires(rng, len(x), self.p)
        noise = rng.standard_normal(x.shape) * self.sigma
        return x + noise * hit[:, None]


@dataclass(frozen=True)
class RandomMask:
    """Zero each coordinate independently with probability ``rate``."""

    rate: float = 0.1
    p: float = 1.0
    kind = "mask"

    def apply(self, x, rng):
        hit = _fires(rng, len(x), self.p)
        drop = (rng.random(x.shape) < self.rate) & hit[:, None]
        return np.where(drop, 0.0, x)


@dataclass(frozen=True)
class RandomScale:
    low: float = 0.8
    high: float = 1.2
    p: float = 1.0
    kind = "scale"

    def apply(self, x, rng):
        hit = _fires(rng, len(x), self.p)
        factor = rng.uniform(self.low, self.high, size=len(x))
        return x * np.where(hit, factor, 1.0)[:, None]


@dataclass(frozen=True)
class RandomResizedCrop:
    shape: tuple = (1, 8, 8)
    min_scale: float = 0.5
    p: float = 1.0
    kind = "crop"

    def apply(self, x, rng):
        c, h, w = self.shape
        imgs = x.reshape(len(x), c, h, w)
        hit = _fires(rng, len(x), self.p)
        area = rng.uniform(self.min_scale, 1.0, size=len(x))
        u0 = rng.random(len(x))
        v0 = rng.random(len(x))
        out = imgs.copy()
        for i in np.flatnonzero(hit):
            ch = max(1, int(round(h * np.sqrt(area[i]))))
            cw = max(1, int(round(w * np.sqrt(area[i]))))
            top = int(u0[i] * (h - ch + 1))
            left = int(v0[i] * (w - cw + 1))
            # nearest-neighbour resize back to (h, w)
            rows = top + (np.arange(h) * ch) // h
            cols = left + (np.arange(w) * cw) // w
            out[i] = imgs[i][:, rows][:, :, cols]
        return out.reshape(len(x), -1)


@dataclass(frozen=True)
class HorizontalFlip:
    shape: tuple = (1, 8, 8)
    p: float = 0.5
    kind = "flip"

    def apply(self, x, rng):
        c, h, w = self.shape
        imgs = x.reshape(len(x), c, h, w)
        hit = _fires(rng, len(x), self.p)
        out = np.where(hit[:, None, None, None], imgs[..., ::-1], imgs)
        return out.reshape(len(x), -1)


@dataclass(frozen=True)
class ColorJitter:
    shape: tuple = (1, 8, 8)
    brightness: float = 0.4
    contrast: float = 0.4
    p: float = 0.8
    kind = "jitter"

    def apply(self, x, rng):
        c, h, w = self.shape
        imgs = x.reshape(len(x), c, h, w)
        hit = _fires(rng, len(x), self.p)
        b = 1.0 + rng.uniform(-self.brightness, self.brightness, size=len(x))
        k = 1.0 + rng.uniform(-self.contrast, self.contrast, size=len(x))
        b = np.where(hit, b, 1.0)[:, None, None, None]
        k = np.where(hit, k, 1.0)[:, None, None, None]
        mean = imgs.mean(axis=(1, 2, 3), keepdims=True)
        out = (imgs * b - mean * b) * k + mean * b
        return out.reshape(len(x), -1)


TRANSFORMS = {cls.kind: cls for cls in (GaussianNoise, RandomMask, RandomScale, RandomResizedCrop, HorizontalFlip, ColorJitter)}


@dataclass(frozen=True)
class AugmentationPolicy:
    transforms: tuple

    def __post_init__(self):
        object.__setattr__(self, "transforms", tuple(self.transforms))
        if not self.transforms:
            raise ConfigError("augmentation policy needs at least one transform")
        for t in self.transforms:
            if not 0.0 <= t.p <= 1.0:
                raise ConfigError(f"{t.kind}: probability {t.p} outside [0, 1]")
            if isinstance(t, RandomMask) and not 0.0 <= t.rate <= 1.0:
                raise ConfigError(f"mask rate {t.rate} outside [0, 1]")
            if isinstance(t, GaussianNoise) and t.sigma < 0:
                raise ConfigError("noise sigma must be non-negative")

    @classmethod
    def default(cls) -> "AugmentationPolicy":
        return cls((GaussianNoise(0.5), RandomMask(0.1), RandomScale(0.8, 1.2)))

    @classmethod
    def identity(cls) -> "AugmentationPolicy":
        return cls((GaussianNoise(0.0, p=0.0),))

    def to_list(self) -> list[dict]:
        out = []
        for t in self.transforms:
            d = asdict(t)
            if "shape" in d:
                d["shape"] = list(d["shape"])
            out.append({"kind": t.kind, **d})
        return out

    @classmethod
    def from_list(cls, items: Sequence[dict]) -> "AugmentationPolicy":
        transforms = []
        for item in items:
            item = dict(item)
            kind = item.pop("kind", None)
            if kind not in TRANSFORMS:
                raise ConfigError(f"unknown transform kind {kind!r}")
            if "shape" in item:
                item["shape"] = tuple(item["shape"])
            try:
                transforms.append(TRANSFORMS[kind](**item))
            except TypeError as exc:
                raise ConfigError(f"bad parameters for {kind}: {exc}") from None
        return cls(tuple(transforms))


def augment_batch(x: np.ndarray, policy: AugmentationPolicy, m: int, rng: np.random.Generator) -> np.ndarray:
    """``m`` views of every row, sample-major: row ``i*m + k`` is view ``k`` of sample ``i``."""
    if m < 2:
        raise ConfigError(f"need at least 2 views, got {m}")
    views = np.repeat(np.asarray(x, dtype=np.float64), m, axis=0)
    for t in policy.transforms:
        views = t.apply(views, rng)
    return views


def augment_views(x: np.ndarray, policy: AugmentationPolicy, m: int, rng: np.random.Generator) -> np.ndarray:
    return augment_batch(np.asarray(x, dtype=np.float64)[None, :], policy, m, rng)
