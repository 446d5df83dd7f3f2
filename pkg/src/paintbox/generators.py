"""Procedural scene presets for demos and tests.

Scenes are one-voxel-thick surface shells with analytic normals and
per-object base colours plus a little per-voxel noise.  ``room`` is the
reference preset: a floor, a table on legs and an open-bottomed box, each
in its own colour and with a ground-truth label.
"""

from __future__ import annotations

import numpy as np

from .scene import LabelGroup, VoxelScene, pack_label

_PRESETS = {}


def preset(name):
    def register(fn):
        _PRESETS[name] = fn
        return fn

    return register


def available_presets() -> list[str]:
    return sorted(_PRESETS)


def generate(name: str, *, voxel_size: float = 0.02, seed: int = 0, labelled: bool = False):
    """Build a preset scene.

    Returns ``(scene, truth)`` where truth is the same geometry with the
    ground-truth labels applied (used for evaluation sidecars).  With
    ``labelled`` the returned scene itself carries the truth labels.
    """
    try:
        fn = _PRESETS[name]
    except KeyError:
        raise ValueError(
            f"unknown preset {name!r}; available: {', '.join(available_presets())}"
        ) from None
    return fn(voxel_size=voxel_size, seed=seed, labelled=labelled)


def _noise(rng: np.random.Generator, base, n: int, amount: int = 4) -> np.ndarray:
    base = np.asarray(base, dtype=np.int64)
    jitter = rng.integers(-amount, amount + 1, size=(n, 3))
    return np.clip(base[None, :] + jitter, 0, 255).astype(np.uint8)


class _Builder:
    """Accumulates (position, normal, object label) triples without duplicates."""

    def __init__(self):
        self.seen = set()
        self.positions = []
        self.normals = []
        self.obj_labels = []

    def add(self, pos, normal, label):
        key = (int(pos[0]), int(pos[1]), int(pos[2]))
        if key in self.seen:
            return
        self.seen.add(key)
        self.positions.append(key)
        self.normals.append(normal)
        self.obj_labels.append(label)

    def rect(self, x0, x1, y0, y1, z0, z1, normal, label):
        for x in range(x0, x1):
            for y in range(y0, y1):
                for z in range(z0, z1):
                    self.add((x, y, z), normal, label)


def _assemble(
    builder: _Builder,
    voxel_size: float,
    seed: int,
    labels: list[tuple[str, tuple, tuple]],
    labelled: bool,
) -> tuple[VoxelScene, VoxelScene]:
    rng = np.random.default_rng(seed)
    scene = VoxelScene(voxel_size)
    for name, display, _base in labels:
        scene.add_label(name, display)
    obj = np.asarray(builder.obj_labels, dtype=np.int64)
    n = len(obj)
    colours = np.zeros((n, 3), dtype=np.uint8)
    for label_id, (_name, _display, base) in enumerate(labels, start=1):
        rows = np.flatnonzero(obj == label_id)
        colours[rows] = _noise(rng, base, len(rows))
    positions = np.asarray(builder.positions, dtype=np.int32)
    normals = np.asarray(builder.normals, dtype=np.float32)
    scene.positions = positions
    scene.colours = colours
    scene.normals = normals
    scene.labels = np.zeros(n, dtype=np.uint8)
    scene._index = {tuple(int(v) for v in p): i for i, p in enumerate(positions)}
    truth = scene.copy()
    truth.labels = np.array(
        [pack_label(int(l), LabelGroup.USER) for l in obj], dtype=np.uint8
    )
    if labelled:
        scene.labels = truth.labels.copy()
    return scene, truth


@preset("room")
def generate_room(*, voxel_size: float = 0.02, seed: int = 0, labelled: bool = False):
    """Floor, table and box in distinct colours; about 46k voxels at 2 cm.

    The box has no bottom face and the table top is a single slab, so every
    voxel is visible from some direction on an orbiting camera path.
    """
    b = _Builder()
    up = (0.0, 0.0, 1.0)
    # floor: 4 m x 4 m single layer at z=0
    b.rect(0, 200, 0, 200, 0, 1, up, 1)
    # table top: 1.2 m x 0.8 m slab at z=25 (0.5 m high)
    b.rect(50, 110, 60, 100, 25, 26, up, 2)
    # table legs: 3x3 columns inset at the corners
    for lx in (52, 104):
        for ly in (62, 94):
            for x in range(lx, lx + 3):
                for y in range(ly, ly + 3):
                    cx, cy = lx + 1, ly + 1
                    nd = np.array([x - cx, y - cy, 0.0])
                    if np.linalg.norm(nd) == 0:
                        nd = np.array([1.0, 0.0, 0.0])
                    nd = nd / np.linalg.norm(nd)
                    for z in range(1, 25):
                        b.add((x, y, z), tuple(nd), 2)
    # box: 0.5 m cube shell on the floor, open-bottomed
    x0, x1, y0, y1, z0, z1 = 140, 165, 130, 155, 1, 26
    b.rect(x0, x1, y0, y1, z1 - 1, z1, up, 3)  # lid
    b.rect(x0, x0 + 1, y0, y1, z0, z1, (-1.0, 0.0, 0.0), 3)
    b.rect(x1 - 1, x1, y0, y1, z0, z1, (1.0, 0.0, 0.0), 3)
    b.rect(x0, x1, y0, y0 + 1, z0, z1, (0.0, -1.0, 0.0), 3)
    b.rect(x0, x1, y1 - 1, y1, z0, z1, (0.0, 1.0, 0.0), 3)
    labels = [
        ("floor", (90, 200, 90), (196, 168, 120)),
        ("table", (220, 80, 80), (150, 60, 40)),
        ("box", (80, 110, 230), (40, 80, 200)),
    ]
    return _assemble(b, voxel_size, seed, labels, labelled)


@preset("plane")
def generate_plane(*, voxel_size: float = 0.02, seed: int = 0, labelled: bool = False):
    """A 2 m x 2 m single-colour floor patch; handy for propagation tests."""
    b = _Builder()
    b.rect(0, 100, 0, 100, 0, 1, (0.0, 0.0, 1.0), 1)
    labels = [("floor", (90, 200, 90), (180, 180, 180))]
    return _assemble(b, voxel_size, seed, labels, labelled)
