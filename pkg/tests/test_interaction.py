"""Picking, cube selections, and the undo/redo command stacks."""

import logging

import numpy as np
import pytest

from paintbox.interaction import (
    CommandManager,
    LabelCommand,
    SeqCommand,
    command_from_record,
    pick,
    voxel_to_cube,
)
from paintbox.raycaster import Intrinsics, RaycastResult
from paintbox.rigging import CameraPose
from paintbox.scene import LabelGroup, MarkMode, pack_label

from conftest import build_scene, random_scene


def view_of(scene, mapping, shape=(4, 4)):
    """RaycastResult with hit_index positions filled from ``mapping``."""
    hit = np.full(shape, -1, dtype=np.int32)
    for (row, col), position in mapping.items():
        hit[row, col] = scene.index_of(position)
    pose = CameraPose.look_at((0, 0, 1.0), (0, 0, 0), up=(0, 1, 0))
    depth = np.where(hit >= 0, 1.0, np.inf)
    return RaycastResult(hit, depth, pose, Intrinsics(shape[1], shape[0]), False)


# -- picking -----------------------------------------------------------------


def test_pick_reads_the_stored_hit_not_the_scene():
    scene = build_scene([(0, 0, 0), (5, 5, 5)])
    result = view_of(scene, {(1, 2): (5, 5, 5)})
    assert pick(scene, result, (1, 2)) == (5, 5, 5)
    assert pick(scene, result, (0, 0)) is None  # miss pixel

    # a pick is a table lookup into the rendered result: repointing the
    # stored hit must change the answer with no rendering involved
    result.hit_index[1, 2] = scene.index_of((0, 0, 0))
    assert pick(scene, result, (1, 2)) == (0, 0, 0)


def test_pick_outside_the_frame_is_a_miss():
    scene = build_scene([(0, 0, 0)])
    result = view_of(scene, {(0, 0): (0, 0, 0)})
    assert pick(scene, result, (4, 0)) is None
    assert pick(scene, result, (0, -1)) is None


# -- cube selections ----------------------------------------------------------


def test_zero_radius_cube_is_the_selection_itself():
    sel = [(1, 2, 3), (4, 5, 6)]
    assert voxel_to_cube(sel, 0).tolist() == [[1, 2, 3], [4, 5, 6]]


def test_unit_cube_covers_the_27_neighbours():
    cube = voxel_to_cube([(5, 5, 5)], 1)
    assert cube.shape == (27, 3)
    assert {tuple(r) for r in cube.tolist()} == {
        (x, y, z) for x in (4, 5, 6) for y in (4, 5, 6) for z in (4, 5, 6)
    }
    # lexicographic offset order with the centre in the middle
    assert cube[0].tolist() == [4, 4, 4]
    assert cube[13].tolist() == [5, 5, 5]
    assert cube[26].tolist() == [6, 6, 6]


def test_cubes_of_two_voxels_stay_in_selection_order():
    cube = voxel_to_cube([(0, 0, 0), (10, 0, 0)], 1)
    assert cube.shape == (54, 3)
    assert (np.abs(cube[:27] - [0, 0, 0]).max(axis=1) <= 1).all()
    assert (np.abs(cube[27:] - [10, 0, 0]).max(axis=1) <= 1).all()


def test_overlapping_cubes_keep_duplicates():
    cube = voxel_to_cube([(0, 0, 0), (1, 0, 0)], 1)
    seen = {}
    for row in map(tuple, cube.tolist()):
        seen[row] = seen.get(row, 0) + 1
    assert seen[(0, 0, 0)] == 2
    assert seen[(1, 0, 0)] == 2


def test_negative_radius_rejected():
    with pytest.raises(ValueError):
        voxel_to_cube([(0, 0, 0)], -1)


# -- commands ------------------------------------------------------------------


def paint(scene, positions, label_id, group=LabelGroup.USER, mode=MarkMode.NORMAL):
    return LabelCommand(scene, positions, pack_label(label_id, group), mode)


def test_label_command_marks_and_undo_restores_bytes():
    scene = build_scene(
        [(0, 0, 0), (1, 0, 0), (2, 0, 0)], label_names={1: "a", 2: "b"}
    )
    before = scene.labels.copy()
    cmd = paint(scene, [(0, 0, 0), (1, 0, 0), (9, 9, 9)], 1)
    cmd.execute()
    assert cmd.result.changed == 2
    assert cmd.result.missing == 1
    assert (scene.label_ids()[:2] == 1).all()
    cmd.undo()
    assert np.array_equal(scene.labels, before)


def test_undo_before_execute_is_a_programming_error():
    scene = build_scene([(0, 0, 0)], label_names={1: "a"})
    with pytest.raises(RuntimeError):
        paint(scene, [(0, 0, 0)], 1).undo()


def test_default_description_counts_the_selection():
    scene = build_scene([(0, 0, 0)], label_names={1: "a"})
    assert paint(scene, [(0, 0, 0), (1, 1, 1)], 1).description == "label 2 voxels"


def test_sequence_applies_in_order_and_undoes_in_reverse():
    scene = build_scene([(0, 0, 0)], label_names={1: "a", 2: "b"})
    before = scene.labels.copy()
    seq = SeqCommand(
        [paint(scene, [(0, 0, 0)], 1), paint(scene, [(0, 0, 0)], 2)],
        description="two strokes",
    )
    seq.execute()
    assert scene.label_ids()[0] == 2  # later command wins
    seq.undo()
    assert np.array_equal(scene.labels, before)


def test_manager_empty_undo_and_redo_warn_and_return_false(caplog):
    manager = CommandManager()
    with caplog.at_level(logging.WARNING):
        assert manager.undo() is False
        assert manager.redo() is False
    assert "undo requested with empty history" in caplog.text
    assert "redo requested with nothing undone" in caplog.text


def test_execute_discards_the_redo_stack():
    scene = build_scene([(0, 0, 0)], label_names={1: "a", 2: "b"})
    manager = CommandManager()
    manager.execute_command(paint(scene, [(0, 0, 0)], 1))
    manager.undo()
    assert manager.can_redo
    manager.execute_command(paint(scene, [(0, 0, 0)], 2))
    assert not manager.can_redo
    assert manager.undone_count == 0


def test_hundred_random_commands_fully_undo():
    rng = np.random.default_rng(7)
    scene = random_scene(rng, 300, num_labels=4)
    initial = scene.labels.copy()
    manager = CommandManager()
    for _ in range(100):
        sel = scene.positions[rng.integers(0, len(scene), size=rng.integers(1, 12))]
        label_id = int(rng.integers(0, 5))
        if label_id == 0:
            cmd = LabelCommand(scene, sel, 0, MarkMode.FORCE)
        else:
            group = LabelGroup(int(rng.integers(0, 3)))
            mode = MarkMode.FORCE if rng.random() < 0.3 else MarkMode.NORMAL
            cmd = LabelCommand(scene, sel, pack_label(label_id, group), mode)
        manager.execute_command(cmd)
    assert manager.executed_count == 100
    while manager.undo():
        pass
    assert np.array_equal(scene.labels, initial)


def test_stack_laws_against_a_shadow_model():
    # States are snapshots of the label field; the cursor walks them the
    # way undo/redo must.
    rng = np.random.default_rng(21)
    scene = random_scene(rng, 120, num_labels=3)
    manager = CommandManager()
    states = [scene.labels.copy()]
    cursor = 0
    for _ in range(400):
        op = rng.choice(["execute", "undo", "redo"])
        if op == "execute":
            sel = scene.positions[rng.integers(0, len(scene), size=3)]
            cmd = LabelCommand(
                scene,
                sel,
                pack_label(int(rng.integers(1, 4)), LabelGroup.USER),
                MarkMode.FORCE,
            )
            manager.execute_command(cmd)
            del states[cursor + 1 :]
            states.append(scene.labels.copy())
            cursor += 1
        elif op == "undo":
            assert manager.undo() == (cursor > 0)
            cursor = max(0, cursor - 1)
        else:
            assert manager.redo() == (cursor < len(states) - 1)
            cursor = min(len(states) - 1, cursor + 1)
        assert np.array_equal(scene.labels, states[cursor])
        assert manager.can_undo == (cursor > 0)
        assert manager.can_redo == (cursor < len(states) - 1)
    assert manager.executed_count == cursor
    assert manager.undone_count == len(states) - 1 - cursor


def test_reset_clears_stacks_without_touching_the_scene():
    scene = build_scene([(0, 0, 0)], label_names={1: "a"})
    manager = CommandManager()
    manager.execute_command(paint(scene, [(0, 0, 0)], 1))
    manager.reset()
    assert not manager.can_undo and not manager.can_redo
    assert scene.label_ids()[0] == 1


# -- records -------------------------------------------------------------------


def test_record_round_trip_before_execution():
    scene = build_scene([(0, 0, 0), (1, 0, 0)], label_names={1: "a"})
    cmd = paint(scene, [(0, 0, 0), (1, 0, 0)], 1)
    rebuilt = command_from_record(scene, cmd.to_record())
    assert rebuilt.to_record() == cmd.to_record()
    rebuilt.execute()
    assert (scene.label_ids()[:2] == 1).all()


def test_record_round_trip_preserves_captured_undo_state():
    scene = build_scene([(0, 0, 0), (1, 0, 0)], label_names={1: "a", 2: "b"})
    scene.mark_voxels([(1, 0, 0)], pack_label(2, LabelGroup.USER), MarkMode.NORMAL)
    cmd = paint(scene, [(0, 0, 0), (1, 0, 0)], 1, mode=MarkMode.FORCE)
    cmd.execute()
    record = cmd.to_record()

    twin = build_scene([(1, 0, 0), (0, 0, 0)], label_names={1: "a", 2: "b"})
    twin.mark_voxels([(1, 0, 0)], pack_label(1, LabelGroup.USER), MarkMode.FORCE)
    twin.mark_voxels([(0, 0, 0)], pack_label(1, LabelGroup.USER), MarkMode.FORCE)
    rebuilt = command_from_record(twin, record)
    rebuilt.undo()
    # old bytes land on the right voxels by POSITION despite different order
    assert twin.label_ids()[twin.index_of((0, 0, 0))] == 0
    assert twin.label_ids()[twin.index_of((1, 0, 0))] == 2


def test_record_against_a_scene_missing_the_voxel_raises():
    scene = build_scene([(0, 0, 0)], label_names={1: "a"})
    cmd = paint(scene, [(0, 0, 0)], 1)
    cmd.execute()
    record = cmd.to_record()
    other = build_scene([(5, 5, 5)], label_names={1: "a"})
    with pytest.raises(ValueError):
        command_from_record(other, record)


def test_sequence_record_round_trip():
    scene = build_scene([(0, 0, 0)], label_names={1: "a", 2: "b"})
    seq = SeqCommand(
        [paint(scene, [(0, 0, 0)], 1), paint(scene, [(0, 0, 0)], 2)],
        description="two strokes",
    )
    record = seq.to_record()
    rebuilt = command_from_record(scene, record)
    assert rebuilt.to_record() == record
    assert rebuilt.description == "two strokes"
    rebuilt.execute()
    assert scene.label_ids()[0] == 2


def test_unknown_record_kind_raises():
    scene = build_scene([(0, 0, 0)])
    with pytest.raises(ValueError):
        command_from_record(scene, {"kind": "teleport"})
