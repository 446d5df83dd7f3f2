"""Shared builders for the test suite."""

import numpy as np
import pytest

from paintbox.scene import LabelGroup, VoxelScene, pack_label


def build_scene(positions, *, colours=None, normals=None, labels=None, voxel_size=0.02, label_names=None):
    """Assemble a scene from parallel arrays with sensible defaults."""
    positions = np.asarray(positions, dtype=np.int64).reshape(-1, 3)
    n = positions.shape[0]
    if colours is None:
        colours = np.full((n, 3), 128, dtype=np.uint8)
    if normals is None:
        normals = np.tile(np.array([0.0, 0.0, 1.0]), (n, 1))
    if labels is None:
        labels = np.zeros(n, dtype=np.uint8)
    scene = VoxelScene(voxel_size)
    if label_names:
        for lid, name in label_names.items():
            scene.add_label(name, (50 + 40 * lid % 200, 80, 90), label_id=lid)
    for i in range(n):
        scene.add_voxel(positions[i], colours[i], normals[i], int(labels[i]))
    len(scene)  # flush the pending buffer so array attributes are populated
    return scene


def random_scene(rng, n, *, extent=20, voxel_size=0.02, num_labels=3):
    """Random voxels at unique positions with unit normals and labels."""
    seen = set()
    positions = []
    while len(positions) < n:
        p = tuple(int(v) for v in rng.integers(0, extent, size=3))
        if p not in seen:
            seen.add(p)
            positions.append(p)
    positions = np.array(positions, dtype=np.int64)
    colours = rng.integers(0, 256, size=(n, 3)).astype(np.uint8)
    normals = rng.normal(size=(n, 3))
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    labels = np.zeros(n, dtype=np.uint8)
    ids = rng.integers(0, num_labels + 1, size=n)
    groups = rng.integers(0, 3, size=n)
    for i in range(n):
        if ids[i] > 0:
            labels[i] = pack_label(int(ids[i]), LabelGroup(int(groups[i])))
    names = {lid: f"label{lid}" for lid in range(1, num_labels + 1)}
    return build_scene(
        positions,
        colours=colours,
        normals=normals,
        labels=labels,
        voxel_size=voxel_size,
        label_names=names,
    )


@pytest.fixture
def flat_plane():
    """A 16x16 single-layer plane, label 1 on the left half."""
    pos = [(x, y, 0) for x in range(16) for y in range(16)]
    labels = [pack_label(1, LabelGroup.USER) if x < 8 else 0 for x, y, _ in pos]
    return build_scene(pos, labels=np.array(labels, dtype=np.uint8), label_names={1: "left"})
