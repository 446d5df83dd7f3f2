"""First-hit raycasting against a brute-force slab oracle, plus compositing."""

import numpy as np
import pytest

from paintbox.raycaster import (
    Intrinsics,
    composite_frame,
    load_depth_pgm,
    raycast,
    save_depth_pgm,
    semantic_frame,
)
from paintbox.rigging import CameraPose
from paintbox.scene import LabelGroup, VoxelScene, pack_label

from conftest import build_scene, random_scene


def slab_first_hit(scene, origin, direction, near, far):
    """Reference raycast: slab-test every voxel, take the earliest entry.

    Returns (set of voxel indices tied at the earliest entry, t_entry) or
    (empty set, inf) on a miss.  Ties within 1e-9 are all reported because
    a grid walk may legitimately visit any one of them first.
    """
    vs = scene.voxel_size
    lo = scene.positions.astype(np.float64) * vs
    hi = lo + vs
    o = np.asarray(origin, dtype=np.float64)
    d = np.asarray(direction, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        t0 = (lo - o) / d
        t1 = (hi - o) / d
    tmin = np.minimum(t0, t1)
    tmax = np.maximum(t0, t1)
    zero = d == 0.0
    tmin[:, zero] = -np.inf
    tmax[:, zero] = np.inf
    enter = np.maximum(tmin.max(axis=1), near)
    exit_ = np.minimum(tmax.min(axis=1), far)
    ok = enter <= exit_
    if zero.any():
        # a ray parallel to an axis must start inside that slab to ever hit
        ok &= ~((o < lo) | (o >= hi))[:, zero].any(axis=1)
    if not ok.any():
        return set(), np.inf
    best = enter[ok].min()
    tied = np.flatnonzero(ok & (enter <= best + 1e-9))
    return set(int(i) for i in tied), float(best)


def orbit_pose(target, radius, theta, phi):
    position = target + radius * np.array(
        [np.cos(theta) * np.cos(phi), np.sin(theta) * np.cos(phi), np.sin(phi)]
    )
    up = (0.0, 1.0, 0.0) if abs(np.sin(phi)) > 0.95 else (0.0, 0.0, 1.0)
    return CameraPose.look_at(position, target, up=up)


# -- basics ---------------------------------------------------------------------


def test_empty_scene_all_misses():
    scene = VoxelScene(0.05)
    pose = orbit_pose(np.zeros(3), 2.0, 0.3, 0.2)
    result = raycast(scene, pose, Intrinsics(8, 6, 4.0, 4.0))
    assert (result.hit_index == -1).all()
    assert np.isinf(result.depth).all()


def test_rays_aimed_away_from_geometry_miss():
    scene = build_scene([(0, 0, 0)], voxel_size=0.05)
    away = CameraPose.look_at((2.0, 0.0, 0.0), (4.0, 0.0, 0.0))
    result = raycast(scene, away, Intrinsics(8, 6, 4.0, 4.0))
    assert (result.hit_index == -1).all()


def test_single_voxel_centre_pixel_hit_and_depth():
    scene = build_scene([(0, 0, 0)], voxel_size=0.1)
    pose = CameraPose.look_at((0.05, 0.05, 1.05), (0.05, 0.05, 0.05), up=(0.0, 1.0, 0.0))
    intr = Intrinsics(width=3, height=3, fx=30.0, fy=30.0)
    result = raycast(scene, pose, intr)
    assert result.hit_index[1, 1] == 0
    # entry at the top face, one voxel below the camera
    assert result.depth[1, 1] == pytest.approx(1.05 - scene.voxel_size, abs=1e-12)
    assert result.voxel_position(scene, (1, 1)) == (0, 0, 0)
    assert result.voxel_position(scene, (0, 0)) is None or result.hit_index[0, 0] >= 0
    assert result.voxel_position(scene, (99, 0)) is None


def test_depth_is_finite_exactly_on_hits():
    rng = np.random.default_rng(2)
    scene = random_scene(rng, 150, extent=12, voxel_size=0.05)
    pose = orbit_pose(scene.world_centres().mean(axis=0), 1.8, 0.7, 0.4)
    result = raycast(scene, pose, Intrinsics(24, 18, 12.0, 12.0))
    hits = result.hit_index >= 0
    assert hits.any()
    assert np.isfinite(result.depth[hits]).all()
    assert np.isinf(result.depth[~hits]).all()


def test_removing_the_hit_voxel_never_decreases_depth():
    rng = np.random.default_rng(3)
    scene = random_scene(rng, 80, extent=8, voxel_size=0.05)
    centre = scene.world_centres().mean(axis=0)
    pose = orbit_pose(centre, 1.5, 2.1, 0.3)
    intr = Intrinsics(16, 12, 8.0, 8.0)
    result = raycast(scene, pose, intr)
    row, col = np.argwhere(result.hit_index >= 0)[0]
    first = int(result.hit_index[row, col])
    d0 = result.depth[row, col]

    trimmed = VoxelScene(scene.voxel_size)
    for i in range(len(scene)):
        if i != first:
            trimmed.add_voxel(scene.positions[i], scene.colours[i], scene.normals[i])
    again = raycast(trimmed, pose, intr)
    d1 = again.depth[row, col]
    assert d1 >= d0 - 1e-12


# -- oracle comparison ------------------------------------------------------------


@pytest.mark.parametrize("seed", range(6))
def test_perspective_matches_slab_oracle(seed):
    rng = np.random.default_rng(100 + seed)
    scene = random_scene(rng, int(rng.integers(20, 120)), extent=10, voxel_size=0.05)
    centre = scene.world_centres().mean(axis=0)
    pose = orbit_pose(centre, rng.uniform(1.0, 2.5), rng.uniform(0, 2 * np.pi), rng.uniform(-1.2, 1.2))
    intr = Intrinsics(16, 12, 8.0, 8.0)
    result = raycast(scene, pose, intr)

    cx, cy = intr.centre
    for row in range(intr.height):
        for col in range(intr.width):
            px = col + 0.5 - cx
            py = row + 0.5 - cy
            direction = pose.n + (px / intr.fx) * pose.v - (py / intr.fy) * pose.u
            tied, t = slab_first_hit(scene, pose.position, direction, 0.1, 10.0)
            got = int(result.hit_index[row, col])
            if not tied:
                assert got == -1
            else:
                assert got in tied
                assert result.depth[row, col] == pytest.approx(t, abs=1e-9)


def test_orthographic_matches_slab_oracle():
    rng = np.random.default_rng(42)
    scene = random_scene(rng, 60, extent=8, voxel_size=0.05)
    centre = scene.world_centres().mean(axis=0)
    pose = CameraPose.look_at(centre + [0.0, 0.0, 1.5], centre, up=(0.0, 1.0, 0.0))
    intr = Intrinsics(12, 10, 6.0, 6.0)
    scale = 0.05
    result = raycast(scene, pose, intr, orthographic=True, ortho_scale=scale)

    cx, cy = intr.centre
    for row in range(intr.height):
        for col in range(intr.width):
            px = col + 0.5 - cx
            py = row + 0.5 - cy
            origin = pose.position + px * scale * pose.v - py * scale * pose.u
            tied, t = slab_first_hit(scene, origin, pose.n, 0.1, 10.0)
            got = int(result.hit_index[row, col])
            if not tied:
                assert got == -1
            else:
                assert got in tied
                assert result.depth[row, col] == pytest.approx(t, abs=1e-9)


def test_orthographic_requires_scale():
    scene = build_scene([(0, 0, 0)])
    pose = orbit_pose(np.zeros(3), 1.0, 0.0, 0.0)
    with pytest.raises(ValueError):
        raycast(scene, pose, Intrinsics(4, 4, 2.0, 2.0), orthographic=True)


# -- compositing ------------------------------------------------------------------


def labelled_plane():
    pos = [(x, y, 0) for x in range(6) for y in range(6)]
    labels = np.array(
        [pack_label(1, LabelGroup.USER) if x < 3 else 0 for x, y, _ in pos], dtype=np.uint8
    )
    colours = np.full((36, 3), 200, dtype=np.uint8)
    scene = build_scene(pos, colours=colours, labels=labels, voxel_size=0.05, label_names={1: "left"})
    pose = CameraPose.look_at((0.15, 0.15, 1.0), (0.15, 0.15, 0.0), up=(0.0, 1.0, 0.0))
    result = raycast(scene, pose, Intrinsics(12, 12, 10.0, 10.0))
    return scene, result


def test_composite_alpha_zero_shows_voxel_colours():
    scene, result = labelled_plane()
    img = composite_frame(result, scene, alpha=0.0)
    hits = result.hit_index >= 0
    assert (img[hits] == 200).all()
    assert (img[~hits] == 16).all()


def test_composite_alpha_one_shows_label_colours():
    scene, result = labelled_plane()
    img = composite_frame(result, scene, alpha=1.0)
    ids = np.where(result.hit_index >= 0, scene.labels[np.maximum(result.hit_index, 0)] & 0x1F, 0)
    label_colour = np.array(scene.label_info(1).colour, dtype=np.uint8)
    assert (img[ids == 1] == label_colour).all()
    # unlabelled hits keep their own colour even at alpha 1
    unlabelled = (result.hit_index >= 0) & (ids == 0)
    assert (img[unlabelled] == 200).all()


def test_composite_blends_at_half_alpha():
    scene, result = labelled_plane()
    img = composite_frame(result, scene, alpha=0.5)
    ids = np.where(result.hit_index >= 0, scene.labels[np.maximum(result.hit_index, 0)] & 0x1F, 0)
    expect = np.rint(0.5 * 200 + 0.5 * np.array(scene.label_info(1).colour, dtype=np.float64))
    assert (img[ids == 1] == expect.astype(np.uint8)).all()


def test_median_filter_removes_isolated_label_impulse():
    scene, result = labelled_plane()
    # flip one voxel in the unlabelled half
    lone = scene.index_of((5, 3, 0))
    scene.write_labels(np.array([lone]), np.array([pack_label(1, LabelGroup.FOREST)], dtype=np.uint8))
    noisy = semantic_frame(result, scene)
    lone_pixels = result.hit_index == lone
    assert (noisy[lone_pixels] == np.array(scene.label_info(1).colour, dtype=np.uint8)).all()
    smooth = composite_frame(result, scene, alpha=1.0, background=(0, 0, 0), median_filter=True)
    assert (smooth[lone_pixels] == 0).any() or (
        smooth[lone_pixels] != np.array(scene.label_info(1).colour)
    ).any()
    # the stored label is untouched by display filtering
    assert scene.labels[lone] == pack_label(1, LabelGroup.FOREST)


# -- depth images -----------------------------------------------------------------


def test_depth_pgm_round_trip(tmp_path):
    depth = np.array([[0.5, 1.234], [np.inf, -0.2]])
    path = tmp_path / "d.pgm"
    save_depth_pgm(depth, path)
    back = load_depth_pgm(path)
    assert back[0, 0] == pytest.approx(0.5, abs=5e-4)
    assert back[0, 1] == pytest.approx(1.234, abs=5e-4)
    assert back[1, 0] == -1.0  # invalid depths round-trip to the miss marker
    assert back[1, 1] == -1.0


def test_depth_pgm_rejects_eight_bit(tmp_path):
    path = tmp_path / "bad.pgm"
    path.write_bytes(b"P5\n2 1\n255\n\x00\x00")
    with pytest.raises(ValueError):
        load_depth_pgm(path)
