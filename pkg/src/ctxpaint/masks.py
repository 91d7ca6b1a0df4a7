"""Inpainting masks: random rectangle unions, patch alignment, PNG files.

Mask convention: 1 marks an unknown pixel to be inpainted.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DimensionError, FormatError, GenerationError
from .io import read_png, save_image

RATIO_TOLERANCE = 0.05
MAX_ATTEMPTS = 1000
SIDE_RANGE = (0.1, 0.5)
ABLATION_RATIOS = (0.3, 0.4, 0.5, 0.6, 0.7)


@dataclass
class MaskSpec:
    pixel_mask: np.ndarray  # uint8 [H, W]
    patch_mask: np.ndarray | None
    achieved_ratio: float
    provenance: str  # "random" or "file"

    @classmethod
    def from_pixels(cls, pixel_mask, provenance: str, patch_size: int | None = None) -> "MaskSpec":
        pm = (np.asarray(pixel_mask) > 0).astype(np.uint8)
        patch = patch_align(pm, patch_size) if patch_size else None
        return cls(pm, patch, float(pm.mean()), provenance)

    def aligned_pixels(self, patch_size: int) -> np.ndarray:
        """Pixel mask grown to whole patches."""
        grid = patch_align(self.pixel_mask, patch_size)
        return np.kron(grid, np.ones((patch_size, patch_size), dtype=np.uint8))


def patch_align(pixel_mask, patch_size: int) -> np.ndarray:
    """A patch is masked iff it holds at least one masked pixel."""
    m = np.asarray(pixel_mask)
    if m.ndim != 2:
        raise DimensionError(f"pixel mask must be 2-D, got shape {m.shape}")
    h, w = m.shape
    if h % patch_size or w % patch_size:
        raise DimensionError(f"mask {h}x{w} not divisible by patch size {patch_size}")
    blocks = m.reshape(h // patch_size, patch_size, w // patch_size, patch_size)
    return (blocks != 0).any(axis=(1, 3)).astype(np.uint8)


def _draw_rects(h: int, w: int, n_rects: int, scale: float, rng: np.random.Generator) -> np.ndarray:
    mask = np.zeros((h, w), dtype=np.uint8)
    base = min(h, w)
    lo, hi = SIDE_RANGE[0] * base * scale, SIDE_RANGE[1] * base * scale
    sides = rng.uniform(lo, hi, size=(n_rects, 2))
    for rh, rw in sides:
        rh = int(np.clip(round(rh), 1, h))
        rw = int(np.clip(round(rw), 1, w))
        y = int(rng.integers(0, h - rh + 1))
        x = int(rng.integers(0, w - rw + 1))
        mask[y : y + rh, x : x + rw] = 1
    return mask


@functools.lru_cache(maxsize=256)
def side_scale(h: int, w: int, n_rects: int, target_ratio: float, samples: int = 400) -> float:
    """Side-length multiplier whose expected union coverage equals ``target_ratio``.

    Found by bisection on a fixed-seed Monte Carlo estimate, so it is a pure
    function of its arguments.
    """

    def coverage(scale: float) -> float:
        rng = np.random.default_rng(12345)
        return float(np.mean([_draw_rects(h, w, n_rects, scale, rng).mean() for _ in range(samples)]))

    lo, hi = 0.05, 2.0 / SIDE_RANGE[0]
    if coverage(hi) < target_ratio:
        return hi
    for _ in range(24):
        mid = 0.5 * (lo + hi)
        if coverage(mid) < target_ratio:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def random_rect_mask(h: int, w: int, n_rects: int = 10, target_ratio: float = 0.4,
                     rng: np.random.Generator | None = None,
                     patch_size: int | None = None) -> MaskSpec:
    """Union of ``n_rects`` random rectangles covering ``target_ratio`` +- 0.05 of the image."""
    if not 0.0 < target_ratio < 1.0:
        raise ContractError(f"target_ratio must be in (0, 1), got {target_ratio}")
    if n_rects < 1:
        raise ContractError(f"n_rects must be >= 1, got {n_rects}")
    if rng is None:
        rng = np.random.default_rng()
    scale = side_scale(h, w, n_rects, round(float(target_ratio), 6))
    for _ in range(MAX_ATTEMPTS):
        mask = _draw_rects(h, w, n_rects, scale, rng)
        if abs(mask.mean() - target_ratio) <= RATIO_TOLERANCE:
            return MaskSpec.from_pixels(mask, "random", patch_size)
    raise GenerationError(
        f"no mask within {RATIO_TOLERANCE} of ratio {target_ratio} after {MAX_ATTEMPTS} attempts"
    )


def load_mask(path, patch_size: int | None = None) -> MaskSpec:
    img = read_png(path)
    if img.mode not in ("L", "1", "P"):
        raise FormatError(f"{path}: mask must be single-channel, got mode {img.mode}")
    if img.mode == "P":
        # palette images are accepted only when the palette is grey
        rgb = np.asarray(img.convert("RGB"))
        if not (np.all(rgb[..., 0] == rgb[..., 1]) and np.all(rgb[..., 1] == rgb[..., 2])):
            raise FormatError(f"{path}: palette mask has colour entries")
    arr = np.asarray(img.convert("L"))
    return MaskSpec.from_pixels(arr > 127, "file", patch_size)


def save_mask(path, mask) -> None:
    m = mask.pixel_mask if isinstance(mask, MaskSpec) else np.asarray(mask)
    save_image(path, (m > 0).astype(np.float32)[None])
