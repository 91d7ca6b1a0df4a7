import hashlib
import json
import os

import numpy as np
import pytest

from ctxpaint.errors import ContractError
from ctxpaint.io import quantize
from ctxpaint.scenes import (
    DEPTH_FACTORS,
    Scene,
    _candidate_seeds,
    draw_pair_params,
    gen_scene,
    load_dataset,
    make_dataset,
    make_pair,
    occlusion_changes,
    overlap_of,
    quality_score,
    render_ids,
    render_view,
    select_seeds,
)


def test_scene_determinism_and_rect_count():
    assert gen_scene(42) == gen_scene(42)
    counts = [len(gen_scene(s).rects) for s in range(1000)]
    assert min(counts) >= 3 and max(counts) <= 8


def test_distinct_seeds_give_distinct_scenes():
    scenes = {repr(gen_scene(s)) for s in range(1000)}
    assert len(scenes) >= 999


def test_canonical_view_and_offsets():
    scene = gen_scene(3)
    assert np.array_equal(render_view(scene, 0, 0.0), render_view(scene))
    assert overlap_of(32, 32) == 0.0 and overlap_of(0, 32) == 1.0 and overlap_of(16, 32) == 0.5
    render_view(scene, 32)  # the far edge of the canvas is still inside
    with pytest.raises(ContractError):
        render_view(scene, 33)
    with pytest.raises(ContractError):
        render_view(scene, -1)


def test_back_to_front_painting():
    scene = gen_scene(11)
    ids = render_ids(scene, 0)
    for i, j in zip(*np.nonzero(ids >= 0)):
        front = scene.rects[ids[i, j]].layer
        # no other rectangle covering this pixel is nearer
        for k, r in enumerate(scene.rects):
            x0, y0 = r.x * 32, r.y * 32
            if x0 <= j + 0.5 < x0 + r.w * 32 and y0 <= i + 0.5 < y0 + r.h * 32:
                assert r.layer >= front


def test_layers_shift_by_depth_factor():
    scene = gen_scene(5)
    for layer, factor in enumerate(DEPTH_FACTORS):
        alone = Scene(scene.seed, scene.bg_colors, scene.bg_angle,
                      (scene.rects[0].__class__(0.6, 0.2, 0.3, 0.3, layer, (1.0, 0.0, 0.0)),))
        a, b = render_ids(alone, 0), render_ids(alone, 10)
        left_a = np.nonzero((a >= 0).any(axis=0))[0].min()
        left_b = np.nonzero((b >= 0).any(axis=0))[0].min()
        assert abs((left_a - left_b) - 10 * factor) <= 1


def test_brightness_is_multiplicative_and_clamped():
    scene = gen_scene(8)
    base = render_view(scene, 4, 0.0).astype(np.float64)
    bright = render_view(scene, 4, 0.15)
    np.testing.assert_allclose(bright, np.clip(base * 1.15, 0, 1), atol=1e-6)


def hidden_by_pixels(scene, idx, offset):
    """Footprint pixels of rectangle ``idx`` not showing its colour (pixel differencing)."""
    r = scene.rects[idx]
    alone = Scene(scene.seed, scene.bg_colors, scene.bg_angle, (r,))
    foot = render_ids(alone, offset) == 0
    img = render_view(scene, offset)
    shows = np.all(np.abs(img - np.asarray(r.color, np.float32)[:, None, None]) < 1e-6, axis=0)
    return foot.sum(), (foot & ~shows).sum()


def test_occlusion_probe_agrees_with_pixel_differencing():
    checked = 0
    for seed in range(200):
        pos_a, pos_b, _ = draw_pair_params(seed)
        scene = gen_scene(seed)
        for i in occlusion_changes(scene, pos_a, pos_b):
            na, ha = hidden_by_pixels(scene, i, pos_a)
            nb, hb = hidden_by_pixels(scene, i, pos_b)
            assert abs(ha / na - hb / nb) * min(na, nb) >= 2
            checked += 1
    assert checked > 20


def test_complementarity_rate():
    seeds = select_seeds(300, 0)
    hits = 0
    for s in seeds:
        pos_a, pos_b, _ = draw_pair_params(s)
        hits += bool(occlusion_changes(gen_scene(s), pos_a, pos_b))
    assert hits / len(seeds) >= 0.30


def test_make_pair_fields():
    pair = make_pair(9)
    pos_a, pos_b, delta = draw_pair_params(9)
    assert pair.offset == pos_b - pos_a and pair.brightness_delta == delta
    assert pair.overlap == overlap_of(pair.offset, 32)
    assert pair.quality_score == pytest.approx(pair.overlap * (1 - abs(delta)))
    assert quality_score(1.0, 0.0) == 1.0
    zero = make_pair(9, offset_range=(0, 0))
    assert zero.overlap == 1.0
    half = make_pair(9, offset_range=(16, 16))
    assert half.overlap == 0.5
    with pytest.raises(ContractError):
        make_pair(9, offset_range=(5, 2))


def test_filter_matches_recomputation():
    chosen = select_seeds(2000, 3)
    brute = []
    for s in _candidate_seeds(3):
        if 0.5 <= make_pair(s).overlap <= 0.9:
            brute.append(s)
        if len(brute) == 2000:
            break
    assert chosen == brute


def tree_digest(root):
    h = hashlib.sha256()
    for dirpath, _, files in sorted(os.walk(root)):
        for name in sorted(files):
            path = os.path.join(dirpath, name)
            h.update(os.path.relpath(path, root).encode())
            with open(path, "rb") as fh:
                h.update(fh.read())
    return h.hexdigest()


def test_dataset_single_pair(tmp_path):
    index = make_dataset(1, 0, tmp_path / "d")
    assert len(index["pairs"]) == 1
    assert sorted(os.listdir(tmp_path / "d" / "pairs")) == ["00000_a.png", "00000_b.png"]


def test_dataset_is_reproducible_and_audited(tmp_path):
    make_dataset(12, 4, tmp_path / "a")
    make_dataset(12, 4, tmp_path / "b", workers=2)
    assert tree_digest(tmp_path / "a") == tree_digest(tmp_path / "b")
    index, views_a, views_b = load_dataset(tmp_path / "a")
    with open(tmp_path / "a" / "index.json") as fh:
        assert json.load(fh) == index
    for k, entry in enumerate(index["pairs"]):
        pair = make_pair(entry["seed"])
        assert entry["overlap"] == pytest.approx(overlap_of(entry["offset"], 32), abs=1e-12)
        assert 0.5 <= entry["overlap"] <= 0.9
        assert np.array_equal(quantize(pair.view_a), quantize(views_a[k]))
        assert np.array_equal(quantize(pair.view_b), quantize(views_b[k]))
