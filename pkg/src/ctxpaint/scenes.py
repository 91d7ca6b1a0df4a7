"""Procedural paired views of layered planar scenes.

A scene is a background gradient plus colored rectangles on three depth
layers, laid out on a canvas twice as wide as one view. A view is a
horizontal window into the canvas; each layer shifts by the camera offset
times its depth factor, so nearer layers move more and occlusions change
between views.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import ContractError
from .io import load_image, save_image

DEPTH_FACTORS = (1.0, 0.7, 0.4)  # layer 0 is nearest
BACKGROUND_FACTOR = 0.25
CANVAS_WIDTH = 2.0  # in view widths
DEFAULT_OVERLAP = (0.5, 0.9)
DEFAULT_DELTA = (-0.2, 0.2)


@dataclass(frozen=True)
class Rect:
    x: float  # left edge, canvas units (view width = 1)
    y: float
    w: float
    h: float
    layer: int
    color: tuple


@dataclass(frozen=True)
class Scene:
    seed: int
    bg_colors: tuple  # two RGB triples
    bg_angle: float
    rects: tuple


@dataclass
class ScenePair:
    seed: int
    view_a: np.ndarray  # [3, S, S] in [0, 1]
    view_b: np.ndarray
    offset: int  # pixels, position of view b minus position of view a
    brightness_delta: float
    overlap: float
    quality_score: float


def gen_scene(seed: int) -> Scene:
    rng = np.random.default_rng([int(seed), 0])
    bg = tuple(tuple(float(c) for c in rng.uniform(0.1, 0.9, 3)) for _ in range(2))
    angle = float(rng.uniform(0.0, math.pi / 2))
    k = int(rng.integers(3, 9))
    rects = []
    for _ in range(k):
        w, h = rng.uniform(0.15, 0.5, 2)
        x = rng.uniform(0.0, CANVAS_WIDTH - w)
        y = rng.uniform(0.0, 1.0 - h)
        rects.append(Rect(float(x), float(y), float(w), float(h), int(rng.integers(0, 3)),
                          tuple(float(c) for c in rng.uniform(0.05, 0.95, 3))))
    return Scene(int(seed), bg, angle, tuple(rects))


def _paint_order(scene: Scene):
    return sorted(range(len(scene.rects)), key=lambda i: -scene.rects[i].layer)


def _check_offset(offset: int, size: int) -> None:
    if not 0 <= offset <= (CANVAS_WIDTH - 1.0) * size:
        raise ContractError(f"view offset {offset} leaves the canvas (size {size})")


def _rect_window(r: Rect, offset: int, size: int):
    """Boolean footprint of a rectangle in a view, ignoring occlusion."""
    shift = offset * DEPTH_FACTORS[r.layer]
    left = r.x * size - shift
    cols = np.arange(size) + 0.5
    rows = np.arange(size) + 0.5
    in_x = (cols >= left) & (cols < left + r.w * size)
    in_y = (rows >= r.y * size) & (rows < (r.y + r.h) * size)
    return in_y[:, None] & in_x[None, :]


def render_ids(scene: Scene, offset: int, size: int = 32) -> np.ndarray:
    """Index of the front-most rectangle per pixel, -1 for background."""
    _check_offset(offset, size)
    ids = np.full((size, size), -1, dtype=np.int64)
    for i in _paint_order(scene):
        ids[_rect_window(scene.rects[i], offset, size)] = i
    return ids


def render_view(scene: Scene, offset: int = 0, brightness_delta: float = 0.0,
                size: int = 32) -> np.ndarray:
    ids = render_ids(scene, offset, size)
    u = (np.arange(size) + 0.5 + offset * BACKGROUND_FACTOR) / size
    v = (np.arange(size) + 0.5) / size
    ca, sa = math.cos(scene.bg_angle), math.sin(scene.bg_angle)
    ramp = (ca * u[None, :] / CANVAS_WIDTH + sa * v[:, None]) / (ca + sa)
    c0, c1 = (np.asarray(c)[:, None, None] for c in scene.bg_colors)
    img = c0 + (c1 - c0) * np.clip(ramp, 0.0, 1.0)[None]
    for i, r in enumerate(scene.rects):
        sel = ids == i
        if sel.any():
            img[:, sel] = np.asarray(r.color)[:, None]
    img = img * (1.0 + brightness_delta)
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def overlap_of(offset: int, size: int) -> float:
    return max(0.0, 1.0 - abs(offset) / size)


def quality_score(overlap: float, brightness_delta: float) -> float:
    return overlap * (1.0 - abs(brightness_delta))


def occlusion_changes(scene: Scene, offset_a: int, offset_b: int, size: int = 32,
                      min_pixels: int = 2) -> list:
    """Rectangles whose hidden fraction differs between two views.

    A rectangle counts when it is at least partly in both windows and the
    change in its occluded fraction amounts to ``min_pixels`` or more pixels
    of its smaller footprint.
    """
    ids_a = render_ids(scene, offset_a, size)
    ids_b = render_ids(scene, offset_b, size)
    changed = []
    for i, r in enumerate(scene.rects):
        na = int(_rect_window(r, offset_a, size).sum())
        nb = int(_rect_window(r, offset_b, size).sum())
        if na == 0 or nb == 0:
            continue
        hidden_a = 1.0 - (ids_a == i).sum() / na
        hidden_b = 1.0 - (ids_b == i).sum() / nb
        if abs(hidden_a - hidden_b) * min(na, nb) >= min_pixels:
            changed.append(i)
    return changed


def draw_pair_params(seed: int, size: int = 32, offset_range: Optional[Sequence[int]] = None,
                     delta_range: Sequence[float] = DEFAULT_DELTA):
    """(position of view a, position of view b, brightness delta) for a seed."""
    if offset_range is None:
        offset_range = (0, int(0.6 * size))
    lo, hi = int(offset_range[0]), int(offset_range[1])
    if lo > hi or delta_range[0] > delta_range[1]:
        raise ContractError("empty offset or brightness range")
    _check_offset(hi, size)
    rng = np.random.default_rng([int(seed), 1])
    d = int(rng.integers(lo, hi + 1))
    delta = float(rng.uniform(delta_range[0], delta_range[1]))
    pos_a, pos_b = (d, 0) if rng.random() < 0.5 else (0, d)
    return pos_a, pos_b, delta


def make_pair(seed: int, offset_range: Optional[Sequence[int]] = None,
              delta_range: Sequence[float] = DEFAULT_DELTA, size: int = 32) -> ScenePair:
    scene = gen_scene(seed)
    pos_a, pos_b, delta = draw_pair_params(seed, size, offset_range, delta_range)
    overlap = overlap_of(pos_b - pos_a, size)
    return ScenePair(
        seed=int(seed),
        view_a=render_view(scene, pos_a, 0.0, size),
        view_b=render_view(scene, pos_b, delta, size),
        offset=pos_b - pos_a,
        brightness_delta=delta,
        overlap=overlap,
        quality_score=quality_score(overlap, delta),
    )


def _candidate_seeds(seed: int):
    rng = np.random.default_rng([int(seed), 2])
    while True:
        yield int(rng.integers(0, 2**31 - 1))


def select_seeds(n: int, seed: int, size: int = 32, overlap_range=DEFAULT_OVERLAP,
                 offset_range=None, delta_range=DEFAULT_DELTA) -> list:
    """First ``n`` candidate pair seeds whose overlap lies in ``overlap_range``."""
    if n < 1:
        raise ContractError(f"dataset size must be >= 1, got {n}")
    chosen = []
    for s in _candidate_seeds(seed):
        pos_a, pos_b, _ = draw_pair_params(s, size, offset_range, delta_range)
        if overlap_range[0] <= overlap_of(pos_b - pos_a, size) <= overlap_range[1]:
            chosen.append(s)
            if len(chosen) == n:
                return chosen


def _write_pair(args):
    out_dir, idx, s, size, offset_range, delta_range = args
    pair = make_pair(s, offset_range, delta_range, size)
    stem = os.path.join(out_dir, "pairs", f"{idx:05d}")
    save_image(stem + "_a.png", pair.view_a)
    save_image(stem + "_b.png", pair.view_b)
    return {
        "id": f"{idx:05d}",
        "seed": pair.seed,
        "offset": pair.offset,
        "delta": round(pair.brightness_delta, 12),
        "overlap": round(pair.overlap, 12),
        "quality": round(pair.quality_score, 12),
    }


def make_dataset(n: int, seed: int, out_dir, size: int = 32, overlap_range=DEFAULT_OVERLAP,
                 offset_range=None, delta_range=DEFAULT_DELTA, workers: int = 1) -> dict:
    """Render ``n`` filtered pairs to ``out_dir/pairs`` and write ``out_dir/index.json``."""
    seeds = select_seeds(n, seed, size, overlap_range, offset_range, delta_range)
    os.makedirs(os.path.join(out_dir, "pairs"), exist_ok=True)
    jobs = [(os.fspath(out_dir), i, s, size, offset_range, delta_range) for i, s in enumerate(seeds)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            entries = list(pool.map(_write_pair, jobs, chunksize=16))
    else:
        entries = [_write_pair(job) for job in jobs]
    index = {
        "seed": int(seed),
        "size": int(size),
        "filters": {"overlap": list(overlap_range)},
        "pairs": entries,
    }
    with open(os.path.join(out_dir, "index.json"), "w") as fh:
        json.dump(index, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return index


def load_dataset(path) -> tuple:
    """``(index, views_a, views_b)`` with views as float32 ``[n, 3, S, S]`` in [0, 1]."""
    with open(os.path.join(path, "index.json")) as fh:
        index = json.load(fh)
    a = np.stack([load_image(os.path.join(path, "pairs", f"{e['id']}_a.png")) for e in index["pairs"]])
    b = np.stack([load_image(os.path.join(path, "pairs", f"{e['id']}_b.png")) for e in index["pairs"]])
    return index, a, b


def render_pairs(seeds: Sequence[int], size: int = 32, offset_range=None,
                 delta_range=DEFAULT_DELTA) -> tuple:
    """In-memory ``(views_a, views_b)`` for the given pair seeds."""
    pairs = [make_pair(s, offset_range, delta_range, size) for s in seeds]
    return np.stack([p.view_a for p in pairs]), np.stack([p.view_b for p in pairs])
