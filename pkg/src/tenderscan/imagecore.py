"""Pixel-level primitives on in-memory rasters.

Images are plain numpy arrays:

* gray   -- ``uint8`` array of shape ``(H, W)``
* color  -- ``uint8`` array of shape ``(H, W, 3)`` in R, G, B order
* binary -- ``bool`` array of shape ``(H, W)``, ``True`` marks foreground

Every function here is pure; inputs are never modified.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

AUTO = "auto"

LUMA_WEIGHTS = (0.299, 0.587, 0.114)


class OutOfBounds(ValueError):
    """A box does not fit inside the image it is applied to."""


class InvalidImage(ValueError):
    pass


@dataclass(frozen=True, order=True)
class BBox:
    """Axis-aligned box, top-left corner plus extent, in pixels."""

    x: int
    y: int
    w: int
    h: int

    def __post_init__(self):
        if self.w < 1 or self.h < 1:
            raise ValueError(f"degenerate box {self}")

    @property
    def x2(self) -> int:
        return self.x + self.w

    @property
    def y2(self) -> int:
        return self.y + self.h

    @property
    def area(self) -> int:
        return self.w * self.h

    def contains(self, other: "BBox") -> bool:
        """True when ``other`` lies inside this box (edges may touch)."""
        return (
            self.x <= other.x
            and self.y <= other.y
            and other.x2 <= self.x2
            and other.y2 <= self.y2
        )

    def fits(self, width: int, height: int) -> bool:
        return self.x >= 0 and self.y >= 0 and self.x2 <= width and self.y2 <= height

    def translate(self, dx: int, dy: int) -> "BBox":
        return BBox(self.x + dx, self.y + dy, self.w, self.h)

    def iou(self, other: "BBox") -> float:
        ix = max(0, min(self.x2, other.x2) - max(self.x, other.x))
        iy = max(0, min(self.y2, other.y2) - max(self.y, other.y))
        inter = ix * iy
        return inter / (self.area + other.area - inter)

    def as_dict(self) -> dict:
        return {"x": self.x, "y": self.y, "w": self.w, "h": self.h}


Threshold = Union[int, str]


def _check(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img)
    if img.ndim not in (2, 3) or img.shape[0] < 1 or img.shape[1] < 1:
        raise InvalidImage(f"expected (H, W) or (H, W, C) raster, got shape {img.shape}")
    if img.ndim == 3 and img.shape[2] != 3:
        raise InvalidImage(f"color images need 3 channels, got {img.shape[2]}")
    return img


def _round_u8(values: np.ndarray) -> np.ndarray:
    # round half up, then clamp
    return np.clip(np.floor(values + 0.5), 0, 255).astype(np.uint8)


def to_grayscale(img: np.ndarray) -> np.ndarray:
    """BT.601 luma of an RGB image. Gray input is returned as a copy."""
    img = _check(img)
    if img.ndim == 2:
        return img.astype(np.uint8, copy=True)
    rgb = img.astype(np.float64)
    r, g, b = LUMA_WEIGHTS
    return _round_u8(r * rgb[..., 0] + g * rgb[..., 1] + b * rgb[..., 2])


def gray_to_color(img: np.ndarray) -> np.ndarray:
    img = _check(img)
    return np.repeat(img[..., None], 3, axis=2).astype(np.uint8)


def otsu_threshold(img: np.ndarray) -> int:
    """Otsu's threshold over the 256-bin histogram.

    Pixels ``<= t`` form the lower class. Between-class variance is compared
    exactly in integer arithmetic so that ties resolve to the lowest ``t``.
    """
    img = _check(img)
    hist = np.bincount(img.ravel().astype(np.int64), minlength=256)[:256]
    counts = [int(c) for c in hist]
    total_n = sum(counts)
    total_s = sum(i * c for i, c in enumerate(counts))

    best_t = 0
    best_num, best_den = -1, 1
    n0 = s0 = 0
    for t in range(256):
        n0 += counts[t]
        s0 += t * counts[t]
        n1 = total_n - n0
        if n0 == 0 or n1 == 0:
            continue
        s1 = total_s - s0
        # sigma_b^2 is proportional to (n1*s0 - n0*s1)^2 / (n0*n1)
        num = (n1 * s0 - n0 * s1) ** 2
        den = n0 * n1
        if num * best_den > best_num * den:
            best_t, best_num, best_den = t, num, den
    return best_t


def threshold_binary(img: np.ndarray, thresh: Threshold = AUTO, invert: bool = False) -> np.ndarray:
    """Foreground where ``pixel > thresh``, flipped when ``invert`` is set."""
    img = _check(img)
    if img.ndim == 3:
        img = to_grayscale(img)
    if thresh == AUTO or thresh is None:
        t = otsu_threshold(img)
    else:
        t = int(thresh)
        if not 0 <= t <= 255:
            raise ValueError(f"threshold must be in 0..255, got {thresh}")
    fg = img > t
    return ~fg if invert else fg


def pad_to_square(img: np.ndarray, fill: int = 0) -> np.ndarray:
    """Place ``img`` at the top-left of a ``max(H, W)`` square canvas."""
    img = _check(img)
    h, w = img.shape[:2]
    side = max(h, w)
    if h == w:
        return img.copy()
    out = np.full((side, side) + img.shape[2:], fill, dtype=img.dtype)
    out[:h, :w] = img
    return out


def _axis_weights(src: int, dst: int):
    scale = src / dst
    pos = (np.arange(dst, dtype=np.float64) + 0.5) * scale - 0.5
    pos = np.clip(pos, 0.0, src - 1)
    lo = np.floor(pos).astype(np.int64)
    hi = np.minimum(lo + 1, src - 1)
    frac = pos - lo
    return lo, hi, frac


def resize_bilinear(img: np.ndarray, target_w: int, target_h: int) -> np.ndarray:
    """Bilinear resize with half-pixel centres and edge clamping."""
    img = _check(img)
    if target_w < 1 or target_h < 1:
        raise ValueError("target size must be at least 1x1")
    h, w = img.shape[:2]
    if (h, w) == (target_h, target_w):
        return img.copy()

    data = img.astype(np.float64)
    y0, y1, fy = _axis_weights(h, target_h)
    x0, x1, fx = _axis_weights(w, target_w)
    if data.ndim == 3:
        fy = fy[:, None, None]
        fx = fx[None, :, None]
    else:
        fy = fy[:, None]
        fx = fx[None, :]
    top = data[y0]
    bottom = data[y1]
    rows = top + (bottom - top) * fy
    left = rows[:, x0]
    right = rows[:, x1]
    out = left + (right - left) * fx
    return _round_u8(out)


def crop(img: np.ndarray, box: BBox) -> np.ndarray:
    img = _check(img)
    h, w = img.shape[:2]
    if not box.fits(w, h):
        raise OutOfBounds(f"{box} exceeds {w}x{h} image")
    return img[box.y:box.y2, box.x:box.x2].copy()


def prepare_crop(img: np.ndarray, size: int, fill: int = 0) -> np.ndarray:
    """Grayscale, pad to a square and resize to ``size x size`` for the classifier."""
    gray = to_grayscale(img)
    return resize_bilinear(pad_to_square(gray, fill), size, size)
