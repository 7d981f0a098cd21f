"""Pixel editing on HxWx3 uint8 arrays. Inputs are never modified in place.

Pixel (row r, col c) sits at coordinate (x=c, y=r); a normalized box maps to
x in [x1*W, x2*W] and y in [y1*H, y2*H].
"""
from __future__ import annotations

import math
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

from .core import BBoxNorm

RED = (255, 0, 0)


class ImagingError(ValueError):
    pass


def load_image(uri: str) -> np.ndarray:
    path = uri[len("file://"):] if uri.startswith("file://") else uri
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB")).copy()


def save_image(image: np.ndarray, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.asarray(image, dtype=np.uint8)).save(path, format="PNG")


def default_stroke(width: int, height: int) -> int:
    return max(2, round(0.004 * max(width, height)))


def blur_sigma(width: int, height: int) -> float:
    return 0.02 * max(width, height)


def blur_radius(sigma: float) -> int:
    return max(1, math.ceil(3 * sigma))


def _band(edge: int, stroke: int) -> tuple[int, int]:
    lo = edge - stroke // 2
    return lo, lo + stroke


def draw_bbox_overlay(image: np.ndarray, bbox: BBoxNorm, stroke_px: Optional[int] = None,
                      color=RED) -> np.ndarray:
    """Axis-aligned rectangle outline of *stroke_px* width centred on the box edges."""
    h, w = image.shape[:2]
    if stroke_px is None:
        stroke_px = default_stroke(w, h)
    if stroke_px < 1:
        raise ImagingError("degenerate stroke")
    if not bbox.is_valid():
        raise ImagingError(f"invalid bbox {bbox}")
    x1, y1, x2, y2 = (int(round(v)) for v in bbox.to_pixels(w, h))
    if x2 - x1 < 2 or y2 - y1 < 2:
        raise ImagingError(f"bbox {bbox} degenerate at {w}x{h} px")
    out = np.array(image, copy=True)
    mask = np.zeros((h, w), dtype=bool)
    for edge in (y1, y2):
        lo, hi = _band(edge, stroke_px)
        mask[max(lo, 0):max(hi, 0), max(x1 - stroke_px // 2, 0):max(x2 - stroke_px // 2 + stroke_px, 0)] = True
    for edge in (x1, x2):
        lo, hi = _band(edge, stroke_px)
        mask[max(y1 - stroke_px // 2, 0):max(y2 - stroke_px // 2 + stroke_px, 0), max(lo, 0):max(hi, 0)] = True
    out[mask] = color
    return out


def gaussian_kernel(sigma: float, radius: int) -> np.ndarray:
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def _convolve_axis(arr: np.ndarray, kernel: np.ndarray, axis: int) -> np.ndarray:
    r = len(kernel) // 2
    pad = [(0, 0)] * arr.ndim
    pad[axis] = (r, r)
    padded = np.pad(arr, pad, mode="symmetric")
    n = arr.shape[axis]
    out = np.zeros_like(arr)
    for i, weight in enumerate(kernel):
        out += weight * np.take(padded, np.arange(i, i + n), axis=axis)
    return out


def gaussian_blur(image: np.ndarray, sigma: Optional[float] = None) -> np.ndarray:
    """Separable Gaussian blur with mirrored borders, radius ceil(3 sigma), rounded back to uint8."""
    h, w = image.shape[:2]
    sigma = blur_sigma(w, h) if sigma is None else sigma
    if sigma <= 0:
        return np.array(image, copy=True)
    kernel = gaussian_kernel(sigma, blur_radius(sigma))
    arr = image.astype(np.float64)
    arr = _convolve_axis(_convolve_axis(arr, kernel, 0), kernel, 1)
    return np.clip(np.rint(arr), 0, 255).astype(np.uint8)


def rect_mask(shape: tuple[int, int], bbox: BBoxNorm) -> np.ndarray:
    h, w = shape
    c0, r0, c1, r1 = bbox.pixel_rect(w, h)
    mask = np.zeros((h, w), dtype=bool)
    mask[r0:r1, c0:c1] = True
    return mask


def ellipse_params(shape: tuple[int, int], bbox: BBoxNorm) -> tuple[float, float, float, float]:
    """(cx, cy, a, b) of the ellipse inscribed in *bbox*."""
    h, w = shape
    x1, y1, x2, y2 = bbox.to_pixels(w, h)
    return (x1 + x2) / 2, (y1 + y2) / 2, (x2 - x1) / 2, (y2 - y1) / 2


def _ellipse_level(shape, cx, cy, a, b) -> np.ndarray:
    h, w = shape
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    return ((xx - cx) / a) ** 2 + ((yy - cy) / b) ** 2


def ellipse_fill_mask(shape: tuple[int, int], bbox: BBoxNorm) -> np.ndarray:
    cx, cy, a, b = ellipse_params(shape, bbox)
    return _ellipse_level(shape, cx, cy, a, b) <= 1.0


def ellipse_stroke_mask(shape: tuple[int, int], bbox: BBoxNorm, stroke_px: int) -> np.ndarray:
    """Pixels between the ellipses grown and shrunk by half the stroke width."""
    cx, cy, a, b = ellipse_params(shape, bbox)
    half = stroke_px / 2
    outer = _ellipse_level(shape, cx, cy, a + half, b + half) <= 1.0
    if a - half <= 0 or b - half <= 0:
        return outer
    inner = _ellipse_level(shape, cx, cy, a - half, b - half) < 1.0
    return outer & ~inner


def draw_ellipse(image: np.ndarray, bbox: BBoxNorm, stroke_px: Optional[int] = None,
                 color=RED) -> np.ndarray:
    h, w = image.shape[:2]
    if stroke_px is None:
        stroke_px = default_stroke(w, h)
    if stroke_px < 1:
        raise ImagingError("degenerate stroke")
    out = np.array(image, copy=True)
    out[ellipse_stroke_mask((h, w), bbox, stroke_px)] = color
    return out


def mask_outline(mask: np.ndarray, stroke_px: int) -> np.ndarray:
    """Boundary band of a binary mask, about *stroke_px* wide and straddling its edge."""
    mask = np.asarray(mask, dtype=bool)
    inner = mask.copy()
    outer = mask.copy()
    grow_in = stroke_px // 2
    grow_out = stroke_px - grow_in
    for _ in range(max(grow_in, 1)):
        inner = _erode(inner)
    for _ in range(max(grow_out - 1, 0)):
        outer = _dilate(outer)
    return outer & ~inner


def _shift_all(mask: np.ndarray, fill: bool) -> list[np.ndarray]:
    p = np.pad(mask, 1, constant_values=fill)
    return [p[1:-1, :-2], p[1:-1, 2:], p[:-2, 1:-1], p[2:, 1:-1]]


def _erode(mask: np.ndarray) -> np.ndarray:
    out = mask.copy()
    for s in _shift_all(mask, False):
        out &= s
    return out


def _dilate(mask: np.ndarray) -> np.ndarray:
    out = mask.copy()
    for s in _shift_all(mask, False):
        out |= s
    return out


def erode(mask: np.ndarray, steps: int = 1) -> np.ndarray:
    for _ in range(steps):
        mask = _erode(mask)
    return mask


def dilate(mask: np.ndarray, steps: int = 1) -> np.ndarray:
    for _ in range(steps):
        mask = _dilate(mask)
    return mask


def to_gray(image: np.ndarray) -> np.ndarray:
    lum = np.rint(image.astype(np.float64) @ np.array([0.299, 0.587, 0.114]))
    lum = np.clip(lum, 0, 255).astype(np.uint8)
    return np.repeat(lum[..., None], 3, axis=2)
