"""Label propagation across the visible surface, one ring per frame.

Each step examines, for every visible voxel not yet carrying the current
label, the pixels on the Chebyshev ring of a fixed radius around it (the
ring, not the direct neighbours, which spreads the label at a controlled
rate).  A ring pixel supports adoption when its voxel already carries the
label and agrees in position, colour and normal direction.  All reads are
against the pre-step state, so the update is order-independent.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .raycaster import RaycastResult
from .scene import LabelGroup, MarkMode, UNLABELLED, VoxelScene, pack_label


@dataclass(frozen=True)
class PropagationSettings:
    ring_radius: int = 2  # pixels
    max_position_dist: float = 0.05  # metres
    max_colour_dist: float = 10.0  # CIELab euclidean
    max_normal_angle_deg: float = 20.0
    min_neighbours: int = 1

    def __post_init__(self):
        if self.ring_radius < 1:
            raise ValueError("ring radius must be at least one pixel")
        if self.min_neighbours < 1:
            raise ValueError("min_neighbours must be at least one")


def propagate_step(
    scene: VoxelScene,
    result: RaycastResult,
    label_id: int,
    settings: PropagationSettings = PropagationSettings(),
    backend=None,
) -> int:
    """Spread ``label_id`` outward by one ring; returns voxels marked.

    Newly adopted voxels are written with the propagated group, so user
    strokes are never overwritten and a later revert can find them.
    """
    if not scene.has_label(label_id) or label_id == 0:
        raise ValueError(f"cannot propagate label {label_id}")
    impl = backend or kernels
    voxels = impl.propagate_candidates(
        result.hit_index,
        scene.label_ids(),
        scene.world_centres(),
        scene.lab_colours().astype(np.float64),
        scene.normals.astype(np.float64),
        int(label_id),
        settings.ring_radius,
        settings.max_position_dist,
        settings.max_colour_dist,
        float(np.cos(np.deg2rad(settings.max_normal_angle_deg))),
        settings.min_neighbours,
    )
    if voxels.size == 0:
        return 0
    outcome = scene.mark_voxels(
        scene.positions[voxels],
        pack_label(label_id, LabelGroup.PROPAGATED),
        MarkMode.NORMAL,
    )
    return outcome.changed


def revert_propagated(scene: VoxelScene, label_id: int) -> int:
    """Reset every (label_id, propagated) voxel to unlabelled; returns count."""
    mask = (scene.label_ids() == label_id) & (
        scene.groups() == int(LabelGroup.PROPAGATED)
    )
    if label_id == 0:
        return 0
    indices = np.flatnonzero(mask)
    scene.write_labels(indices, np.uint8(UNLABELLED))
    return int(indices.size)
