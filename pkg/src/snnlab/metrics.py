"""Dark pixel ratio, mean squared error and tensor sparsity."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import ShapeError, as_tensor

LUMA_WEIGHTS = (0.299, 0.587, 0.114)


@dataclass(frozen=True)
class DarkRatioConfig:
    theta: float = 0.05
    intensity_mode: str = "mean_channels"  # or "luma"

    def __post_init__(self):
        if not 0.0 <= self.theta <= 1.0:
            raise ValueError(f"theta must lie in [0, 1], got {self.theta}")
        if self.intensity_mode not in ("mean_channels", "luma"):
            raise ValueError(f"unknown intensity_mode {self.intensity_mode!r}")


def intensity(image, mode: str = "mean_channels") -> np.ndarray:
    """Per-pixel intensity of a ``[C, H, W]`` (or ``[H, W]``) image."""
    image = as_tensor(image)
    if image.ndim == 2:
        return image
    if image.ndim != 3:
        raise ShapeError(f"expected [C, H, W] or [H, W] image, got {image.shape}")
    if mode == "luma" and image.shape[0] == 3:
        return np.tensordot(np.array(LUMA_WEIGHTS), image, axes=1)
    return image.mean(axis=0)


def dark_pixel_ratio(image, cfg: DarkRatioConfig = DarkRatioConfig()) -> float:
    """Fraction of pixels whose intensity is strictly below ``cfg.theta``."""
    image = as_tensor(image)
    if image.size == 0:
        raise ShapeError("empty image")
    if image.min() < 0.0 or image.max() > 1.0:
        raise ValueError("pixel values must lie in [0, 1]")
    lum = intensity(image, cfg.intensity_mode)
    return float(np.count_nonzero(lum < cfg.theta)) / lum.size


def mse(pred, target) -> float:
    pred = as_tensor(pred)
    target = as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"mse: shapes {pred.shape} and {target.shape} differ")
    return float(np.mean((pred - target) ** 2))


def sparsity(t) -> float:
    """Fraction of exactly-zero elements."""
    t = np.asarray(t)
    if t.size == 0:
        return 1.0
    return float(np.count_nonzero(t == 0)) / t.size
