"""Touch detection: depth cleaning, change mask, components, the strict band.

Oracles here are deliberately naive: per-pixel loops for the mask and
morphology, BFS flood fill for components.
"""

import json
from collections import deque

import numpy as np
import pytest

from paintbox.forest import ForestSettings, RandomForest
from paintbox.generators import generate
from paintbox.touch import (
    TouchPipeline,
    TouchScript,
    TouchSettings,
    candidate_histogram,
    change_mask,
    connected_components,
    default_scripts,
    load_sequence,
    load_touch_classifier,
    prepare_inputs,
    save_sequence,
    synthesize_frames,
)


# -- oracles -------------------------------------------------------------------


def mask_oracle(d, r, tau):
    h, w = d.shape
    out = np.zeros((h, w), dtype=bool)
    for i in range(h):
        for j in range(w):
            out[i, j] = d[i, j] >= 0.0 and abs(d[i, j] - r[i, j]) > tau
    return out


def opening_oracle(mask):
    """3x3 erosion then dilation, borders treated as empty."""
    h, w = mask.shape
    eroded = np.zeros_like(mask)
    for i in range(h):
        for j in range(w):
            ok = True
            for di in (-1, 0, 1):
                for dj in (-1, 0, 1):
                    ni, nj = i + di, j + dj
                    if not (0 <= ni < h and 0 <= nj < w) or not mask[ni, nj]:
                        ok = False
            eroded[i, j] = ok
    out = np.zeros_like(mask)
    for i in range(h):
        for j in range(w):
            for di in (-1, 0, 1):
                for dj in (-1, 0, 1):
                    ni, nj = i + di, j + dj
                    if 0 <= ni < h and 0 <= nj < w and eroded[ni, nj]:
                        out[i, j] = True
    return out


def flood_fill_components(mask):
    """8-connected labelling by BFS; labels assigned in scan order from 1."""
    h, w = mask.shape
    labels = np.zeros((h, w), dtype=np.int64)
    count = 0
    for i in range(h):
        for j in range(w):
            if not mask[i, j] or labels[i, j]:
                continue
            count += 1
            queue = deque([(i, j)])
            labels[i, j] = count
            while queue:
                ci, cj = queue.popleft()
                for di in (-1, 0, 1):
                    for dj in (-1, 0, 1):
                        ni, nj = ci + di, cj + dj
                        if 0 <= ni < h and 0 <= nj < w and mask[ni, nj] and not labels[ni, nj]:
                            labels[ni, nj] = count
                            queue.append((ni, nj))
    return labels, count


class FixedScores:
    """Stand-in candidate classifier returning scripted P(touch) per row."""

    settings = ForestSettings(num_labels=2, feature_dim=64)

    def __init__(self, scores):
        self.scores = list(scores)

    def predict_pmf(self, feats):
        p = np.asarray(self.scores[: len(feats)], dtype=np.float64)
        return np.stack([1.0 - p, p], axis=1)


# -- input cleaning --------------------------------------------------------------


def test_prepare_inputs_cleans_both_streams():
    settings = TouchSettings()
    raw = np.array([[0.5, -3.0, np.nan, np.inf, 2.5, 0.0]])
    scene = np.array([[1.0, np.inf, 2.0, np.nan, 0.3, 5.0]])
    d, r = prepare_inputs(raw, scene, settings)
    assert d.tolist() == [[0.5, -1.0, -1.0, -1.0, -1.0, 0.0]]  # >max_depth invalid
    assert r.tolist() == [[1.0, 100.0, 2.0, 100.0, 0.3, 5.0]]


def test_change_mask_equals_scalar_oracle():
    rng = np.random.default_rng(5)
    for _ in range(10):
        d = rng.uniform(-1.0, 2.0, size=(15, 17))
        d[rng.random(d.shape) < 0.2] = -1.0
        r = rng.uniform(0.0, 2.0, size=(15, 17))
        tau = float(rng.uniform(0.0, 0.5))
        got = change_mask(d, r, tau, denoise=False)
        assert np.array_equal(got, mask_oracle(d, r, tau))


def test_invalid_pixels_never_enter_the_mask():
    d = np.full((4, 4), -1.0)
    r = np.full((4, 4), 100.0)  # enormous disagreement, all invalid
    assert not change_mask(d, r, 0.01, denoise=False).any()


def test_denoise_is_a_3x3_morphological_opening():
    rng = np.random.default_rng(6)
    for _ in range(5):
        d = rng.uniform(0.0, 2.0, size=(12, 14))
        r = rng.uniform(0.0, 2.0, size=(12, 14))
        raw = change_mask(d, r, 0.3, denoise=False)
        got = change_mask(d, r, 0.3, denoise=True)
        assert np.array_equal(got, opening_oracle(raw))


def test_opening_removes_isolated_impulses_and_keeps_blocks():
    mask = np.zeros((12, 12), dtype=bool)
    mask[2, 2] = True  # lone pixel
    mask[5:10, 5:10] = True  # solid block
    opened = opening_oracle(mask)
    assert not opened[2, 2]
    assert opened[5:10, 5:10].all()


def test_connected_components_match_flood_fill():
    rng = np.random.default_rng(8)
    for _ in range(10):
        mask = rng.random((20, 24)) < 0.35
        got_labels, got_count = connected_components(mask)
        want_labels, want_count = flood_fill_components(mask)
        assert got_count == want_count
        # same partition: each got-component maps 1:1 onto a want-component
        for comp in range(1, got_count + 1):
            member = want_labels[got_labels == comp]
            assert member.size and (member == member[0]).all()
        assert np.array_equal(got_labels > 0, want_labels > 0)


def test_candidate_histogram_bins_and_range():
    settings = TouchSettings()
    d = np.array([[1.0, 1.0, 1.0, 1.0]])
    # diffs: 0.004 (bin 0), 0.02 (bin 2), 0.499 (bin 63), 0.9 (out of range)
    r = np.array([[1.004, 1.02, 1.499, 1.9]])
    hist = candidate_histogram(d, r, np.ones((1, 4), dtype=bool), settings)
    assert hist.shape == (64,)
    assert hist.sum() == 3
    assert hist[0] == 1 and hist[2] == 1 and hist[63] == 1


# -- pipeline ----------------------------------------------------------------------


def test_classifier_shape_validation():
    with pytest.raises(ValueError):
        TouchPipeline(RandomForest(ForestSettings(num_labels=3, feature_dim=64)))
    with pytest.raises(ValueError):
        TouchPipeline(RandomForest(ForestSettings(num_labels=2, feature_dim=32)))


def touch_frame(width=64, height=64):
    """Flat scene at 1 m with a 30x30 block closer to the camera.

    Left half of the block sits inside the (tau, gamma) band, the right
    half beyond gamma; both exceed tau so they form one component.
    """
    r = np.full((height, width), 1.0)
    d = r.copy()
    d[10:40, 5:20] -= 0.02  # inside the band
    d[10:40, 20:35] -= 0.04  # changed, but too deep to be a touch
    return d, r


def test_points_come_only_from_the_strict_band():
    d, r = touch_frame()
    pipeline = TouchPipeline(FixedScores([0.9]), TouchSettings(quantize=1))
    result = pipeline.process(d, r)
    assert result.touched
    assert len(result.candidates) == 1
    assert result.candidates[0].area == 30 * 30
    got = {tuple(p) for p in result.points.tolist()}
    want = {(i, j) for i in range(10, 40) for j in range(5, 20)}
    assert got == want


def test_rejected_candidates_yield_no_points():
    d, r = touch_frame()
    pipeline = TouchPipeline(FixedScores([0.4]), TouchSettings(quantize=1))
    result = pipeline.process(d, r)
    assert len(result.candidates) == 1
    assert not result.candidates[0].accepted
    assert not result.touched
    assert len(result.points) == 0


def test_best_candidate_is_the_highest_scoring_accepted_one():
    r = np.full((64, 96), 1.0)
    d = r.copy()
    d[5:25, 5:25] -= 0.02
    d[35:55, 50:80] -= 0.02
    pipeline = TouchPipeline(FixedScores([0.6, 0.9]), TouchSettings(quantize=1))
    result = pipeline.process(d, r)
    assert [c.accepted for c in result.candidates] == [True, True]
    assert result.best is result.candidates[1]
    rows = result.points[:, 0]
    assert rows.min() >= 35  # points come from the winning component only


def test_area_gates_filter_candidates():
    settings = TouchSettings(quantize=1)
    r = np.full((64, 64), 1.0)
    d = r.copy()
    d[2:8, 2:8] -= 0.02  # 36 px, below area_min=150
    pipeline = TouchPipeline(FixedScores([0.9]), settings)
    assert pipeline.process(d, r).candidates == []

    d = r - 0.02  # whole frame changed: 4096 px > 40% of 4096
    assert pipeline.process(d, r).candidates == []


def test_quantization_scales_points_back_to_full_resolution():
    r = np.full((128, 128), 1.0)
    d = r.copy()
    d[20:80, 20:80] -= 0.02
    pipeline = TouchPipeline(FixedScores([0.9]), TouchSettings(quantize=2))
    result = pipeline.process(d, r)
    assert result.change_mask.shape == (64, 64)
    assert result.touched
    assert (result.points % 2 == 0).all()
    assert result.points[:, 0].min() == 20 and result.points[:, 0].max() == 78


# -- scripts and sequences -----------------------------------------------------------


def test_script_json_round_trip_and_defaults():
    script = TouchScript.from_json(
        json.dumps({"frames": 10, "keyframes": [[0, [0, 0, 1]], [9, [1, 0, 1]]]})
    )
    assert script.frames == 10
    assert script.noise_sigma_mm == 5.0
    assert script.radii_mm == (70.0, 55.0, 30.0)
    assert script.centre_at(0).tolist() == [0, 0, 1]
    mid = script.centre_at(3)
    assert np.allclose(mid, [3 / 9, 0, 1])
    assert script.centre_at(50).tolist() == [1, 0, 1]  # clamped past the end


def test_synthetic_frames_report_contact_exactly_when_the_hand_meets_the_surface():
    scene, _ = generate("plane", seed=3)
    surface_z = float(scene.world_centres()[:, 2].max())
    mid = scene.world_centres().mean(axis=0)
    hover = TouchScript(
        frames=4,
        keyframes=[(0, (mid[0], mid[1], surface_z + 0.2))],
        noise_sigma_mm=0.0,
        dropout=0.0,
    )
    touch = TouchScript(
        frames=4,
        keyframes=[(0, (mid[0], mid[1], surface_z + 0.03))],
        noise_sigma_mm=0.0,
        dropout=0.0,
    )
    hover_frames = [f for f, *_ in synthesize_frames(scene, hover, width=160, height=120)]
    touch_frames = [f for f, *_ in synthesize_frames(scene, touch, width=160, height=120)]
    assert not any(f.contact for f in hover_frames)
    assert all(f.contact for f in touch_frames)
    assert all(len(f.contact_pixels) > 0 for f in touch_frames)


def test_sequence_save_load_round_trip(tmp_path):
    scene, _ = generate("plane", seed=3)
    mid = scene.world_centres().mean(axis=0)
    script = TouchScript(
        frames=3, keyframes=[(0, (mid[0], mid[1], 0.4)), (2, (mid[0], mid[1], 0.1))]
    )
    doc = save_sequence(scene, script, tmp_path / "seq", width=96, height=80)
    assert doc["frames"] == 3
    assert (tmp_path / "seq" / "sequence.json").exists()

    loaded = list(load_sequence(tmp_path / "seq"))
    assert len(loaded) == 3
    for i, (depth, pose_matrix, meta) in enumerate(loaded):
        assert depth.shape == (80, 96)
        assert pose_matrix.shape == (4, 4)
        assert meta["projection"] == "orthographic"
        frame = next(
            f
            for k, (f, *_rest) in enumerate(synthesize_frames(scene, script, width=96, height=80))
            if k == i
        )
        valid = (frame.raw_depth >= 0) & (frame.raw_depth < 65.535)
        assert np.allclose(depth[valid], frame.raw_depth[valid], atol=5e-4)


def test_packaged_classifier_detects_scripted_touches():
    scene, _ = generate("plane", seed=3)
    pipeline = TouchPipeline(load_touch_classifier())
    tp = fp = fn = tn = 0
    for script in default_scripts(scene):
        for frame, *_ in synthesize_frames(scene, script):
            got = pipeline.process(frame.raw_depth, frame.scene_depth).touched
            if frame.contact and got:
                tp += 1
            elif frame.contact:
                fn += 1
            elif got:
                fp += 1
            else:
                tn += 1
    assert tp + fn > 10 and tn + fp > 10  # both behaviours exercised
    recall = tp / (tp + fn)
    precision = tp / (tp + fp)
    assert recall >= 0.9, (tp, fn, fp, tn)
    assert precision >= 0.9, (tp, fn, fp, tn)
