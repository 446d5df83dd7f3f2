"""Pixel and voxel sampling over raycast results.

Training draws a bounded quota per label, without replacement, from the
visible voxels carrying that label; prediction draws a fixed number of
visible voxels uniformly with replacement.  Candidate sets are built from
per-label bit masks compacted with an exclusive prefix sum, which keeps
the construction a fixed data-parallel pattern.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .raycaster import RaycastResult
from .scene import LabelGroup, VoxelScene

TRAINING_QUOTA = 128
PREDICTION_SAMPLES = 8192

TRAINABLE_GROUPS = (LabelGroup.USER, LabelGroup.PROPAGATED)


@dataclass
class CandidateArrays:
    """Compacted visible-pixel candidates for one label."""

    label_id: int
    pixels: np.ndarray  # (M,) flat pixel indices, ascending
    voxel_indices: np.ndarray  # (M,) int32 voxel array indices

    @property
    def count(self) -> int:
        return len(self.pixels)


def build_label_mask(
    result: RaycastResult,
    scene: VoxelScene,
    label_id: int,
    groups=TRAINABLE_GROUPS,
) -> np.ndarray:
    """(H, W) uint8 mask of pixels whose voxel carries ``label_id``.

    ``groups`` restricts which provenance groups count; the default is the
    training-eligible pair (user strokes and propagated labels).
    """
    hit = result.hit_index
    valid = hit >= 0
    safe = np.where(valid, hit, 0)
    ids = scene.label_ids()[safe]
    mask = valid & (ids == label_id)
    if groups is not None:
        grp = scene.groups()[safe]
        allowed = np.zeros_like(mask)
        for g in groups:
            allowed |= grp == int(g)
        mask &= allowed
    return mask.astype(np.uint8)


def compact_mask(mask: np.ndarray, backend=None) -> np.ndarray:
    """Indices of set bits via exclusive-scan scatter, ascending."""
    impl = backend or kernels
    flat = mask.ravel().astype(np.int64)
    offsets = impl.exclusive_scan(flat)
    if flat.size == 0:
        return np.empty(0, dtype=np.int64)
    total = int(offsets[-1] + flat[-1])
    out = np.empty(total, dtype=np.int64)
    sel = flat != 0
    out[offsets[sel]] = np.arange(flat.size, dtype=np.int64)[sel]
    return out


def collect_candidates(
    result: RaycastResult,
    scene: VoxelScene,
    label_id: int,
    groups=TRAINABLE_GROUPS,
    backend=None,
) -> CandidateArrays:
    mask = build_label_mask(result, scene, label_id, groups)
    pixels = compact_mask(mask, backend=backend)
    return CandidateArrays(label_id, pixels, result.hit_index.ravel()[pixels])


def sample_without_replacement(rng: np.random.Generator, n: int, k: int) -> np.ndarray:
    """First k entries of a partial Fisher-Yates shuffle of range(n)."""
    if k > n:
        raise ValueError("cannot draw more than n without replacement")
    idx = np.arange(n, dtype=np.int64)
    for i in range(k):
        j = i + int(rng.integers(0, n - i))
        idx[i], idx[j] = idx[j], idx[i]
    return idx[:k].copy()


def sample_for_training(
    result: RaycastResult,
    scene: VoxelScene,
    rng: np.random.Generator,
    *,
    quota: int = TRAINING_QUOTA,
    label_ids=None,
    backend=None,
) -> dict[int, np.ndarray]:
    """Per-label voxel indices for training, at most ``quota`` per label.

    Labels with no eligible visible pixels are omitted.  Only user and
    propagated labels feed training, never the forest's own predictions.
    """
    if label_ids is None:
        label_ids = [info.id for info in scene.label_table if info.id != 0]
    out: dict[int, np.ndarray] = {}
    for label_id in label_ids:
        cand = collect_candidates(result, scene, label_id, backend=backend)
        if cand.count == 0:
            continue
        take = min(quota, cand.count)
        picks = sample_without_replacement(rng, cand.count, take)
        out[label_id] = cand.voxel_indices[picks].astype(np.int64)
    return out


def sample_for_prediction(
    result: RaycastResult,
    rng: np.random.Generator,
    *,
    count: int = PREDICTION_SAMPLES,
    backend=None,
) -> np.ndarray:
    """Voxel indices drawn uniformly with replacement over non-empty pixels."""
    mask = (result.hit_index >= 0).astype(np.uint8)
    pixels = compact_mask(mask, backend=backend)
    if pixels.size == 0:
        return np.empty(0, dtype=np.int64)
    draws = rng.integers(0, pixels.size, size=count)
    return result.hit_index.ravel()[pixels[draws]].astype(np.int64)
