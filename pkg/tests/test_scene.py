"""Label packing, marker rule, and the binary scene format."""

import struct

import numpy as np
import pytest
from hypothesis import given, strategies as st

from paintbox.scene import (
    MAX_LABELS,
    UNLABELLED,
    LabelEncodingError,
    LabelGroup,
    MarkMode,
    SceneFormatError,
    VoxelScene,
    is_valid_packed,
    load_scene,
    pack_label,
    save_scene,
    unpack_label,
)

from conftest import build_scene, random_scene


# -- packed byte ------------------------------------------------------------


def test_pack_unpack_round_trip_all_valid_combinations():
    for label_id in range(MAX_LABELS):
        for group in LabelGroup:
            if label_id == 0 and group != LabelGroup.PROPAGATED:
                with pytest.raises(LabelEncodingError):
                    pack_label(label_id, group)
                continue
            byte = pack_label(label_id, group)
            assert 0 <= byte <= 0x7F
            assert unpack_label(byte) == (label_id, group)


def test_unlabelled_is_zero_byte():
    assert UNLABELLED == 0
    assert pack_label(0, LabelGroup.PROPAGATED) == 0
    assert unpack_label(0) == (0, LabelGroup.PROPAGATED)


@given(st.integers(min_value=0, max_value=255))
def test_every_byte_either_round_trips_or_is_rejected(byte):
    if is_valid_packed(byte):
        label_id, group = unpack_label(byte)
        assert pack_label(label_id, group) == byte
    else:
        with pytest.raises(LabelEncodingError):
            unpack_label(byte)


def test_reserved_bit_and_bad_group_rejected():
    assert not is_valid_packed(0x80)  # reserved bit
    assert not is_valid_packed(0x01 | (3 << 5))  # group bits 3
    assert not is_valid_packed(pack_label(1, LabelGroup.USER) | 0x80)
    with pytest.raises(LabelEncodingError):
        pack_label(32, LabelGroup.USER)
    with pytest.raises(LabelEncodingError):
        pack_label(-1, LabelGroup.USER)


# -- marker rule --------------------------------------------------------------


def make_single(label_byte):
    scene = build_scene([(0, 0, 0)], labels=np.array([label_byte], dtype=np.uint8), label_names={1: "a", 2: "b"})
    return scene


@pytest.mark.parametrize(
    "old,new,mode,expect_write",
    [
        # user input always lands
        (UNLABELLED, pack_label(1, LabelGroup.USER), MarkMode.NORMAL, True),
        (pack_label(2, LabelGroup.USER), pack_label(1, LabelGroup.USER), MarkMode.NORMAL, True),
        (pack_label(2, LabelGroup.FOREST), pack_label(1, LabelGroup.USER), MarkMode.NORMAL, True),
        # non-user new label never overwrites a user label in NORMAL mode
        (pack_label(2, LabelGroup.USER), pack_label(1, LabelGroup.FOREST), MarkMode.NORMAL, False),
        (pack_label(2, LabelGroup.USER), pack_label(1, LabelGroup.PROPAGATED), MarkMode.NORMAL, False),
        # but does overwrite non-user labels
        (pack_label(2, LabelGroup.FOREST), pack_label(1, LabelGroup.PROPAGATED), MarkMode.NORMAL, True),
        (UNLABELLED, pack_label(1, LabelGroup.FOREST), MarkMode.NORMAL, True),
        # force overrides the rule
        (pack_label(2, LabelGroup.USER), pack_label(1, LabelGroup.FOREST), MarkMode.FORCE, True),
        (pack_label(2, LabelGroup.USER), UNLABELLED, MarkMode.FORCE, True),
    ],
)
def test_marker_rule_cases(old, new, mode, expect_write):
    scene = make_single(old)
    result = scene.mark_voxels([(0, 0, 0)], new, mode)
    if expect_write:
        assert result.changed == 1
        assert scene.voxel((0, 0, 0)).label == new
        assert result.old_labels[0] == old
    else:
        assert result.changed == 0
        assert scene.voxel((0, 0, 0)).label == old


def test_rewriting_identical_byte_counts_as_unchanged():
    byte = pack_label(1, LabelGroup.USER)
    scene = make_single(byte)
    result = scene.mark_voxels([(0, 0, 0)], byte, MarkMode.NORMAL)
    assert result.changed == 0


def test_unlabelled_write_requires_force():
    scene = make_single(pack_label(1, LabelGroup.USER))
    kept = scene.mark_voxels([(0, 0, 0)], UNLABELLED, MarkMode.NORMAL)
    assert kept.changed == 0
    erased = scene.mark_voxels([(0, 0, 0)], UNLABELLED, MarkMode.FORCE)
    assert erased.changed == 1
    assert scene.voxel((0, 0, 0)).label == UNLABELLED


def test_missing_positions_are_counted_not_errors():
    scene = make_single(UNLABELLED)
    result = scene.mark_voxels([(0, 0, 0), (5, 5, 5), (9, 9, 9)], pack_label(1, LabelGroup.USER))
    assert result.changed == 1
    assert result.missing == 2


def test_duplicate_selection_entries_write_once():
    scene = make_single(UNLABELLED)
    result = scene.mark_voxels([(0, 0, 0)] * 4, pack_label(1, LabelGroup.USER))
    assert result.changed == 1


def test_mark_rejects_unknown_or_invalid_labels():
    scene = make_single(UNLABELLED)
    with pytest.raises(LabelEncodingError):
        scene.mark_voxels([(0, 0, 0)], 0x80)
    with pytest.raises(ValueError):
        scene.mark_voxels([(0, 0, 0)], pack_label(7, LabelGroup.USER))  # id 7 not in table


@given(
    old_id=st.integers(min_value=0, max_value=2),
    old_group=st.sampled_from(list(LabelGroup)),
    new_id=st.integers(min_value=1, max_value=2),
    new_group=st.sampled_from(list(LabelGroup)),
)
def test_marker_rule_never_loses_user_labels_in_normal_mode(old_id, old_group, new_id, new_group):
    if old_id == 0:
        old_group = LabelGroup.PROPAGATED
    old = pack_label(old_id, old_group)
    new = pack_label(new_id, new_group)
    scene = make_single(old)
    scene.mark_voxels([(0, 0, 0)], new, MarkMode.NORMAL)
    after = scene.voxel((0, 0, 0))
    if old_group == LabelGroup.USER and new_group != LabelGroup.USER:
        assert after.label == old
    else:
        assert after.label == new


def test_mark_result_supports_exact_undo():
    rng = np.random.default_rng(3)
    scene = random_scene(rng, 200)
    before = scene.labels.copy()
    result = scene.mark_voxels(scene.positions[::3], pack_label(2, LabelGroup.USER), MarkMode.FORCE)
    assert result.changed > 0
    scene.write_labels(result.changed_indices, result.old_labels)
    assert np.array_equal(scene.labels, before)


# -- scene container ----------------------------------------------------------


def test_voxel_size_must_be_positive():
    with pytest.raises(ValueError):
        VoxelScene(0.0)
    with pytest.raises(ValueError):
        VoxelScene(-0.1)


def test_duplicate_position_rejected():
    scene = build_scene([(1, 2, 3)])
    with pytest.raises(ValueError):
        scene.add_voxel((1, 2, 3), (0, 0, 0), (0, 0, 1))


def test_non_unit_normal_rejected_but_zero_normal_allowed():
    scene = VoxelScene(0.02)
    with pytest.raises(ValueError):
        scene.add_voxel((0, 0, 0), (1, 2, 3), (0.0, 0.0, 0.5))
    scene.add_voxel((0, 0, 0), (1, 2, 3), (0.0, 0.0, 0.0))  # absent normal sentinel
    assert len(scene) == 1


def test_label_table_dense_assignment_and_lookup():
    scene = VoxelScene(0.02)
    a = scene.add_label("floor", (10, 20, 30))
    b = scene.add_label("wall", (40, 50, 60))
    assert (a.id, b.id) == (1, 2)
    assert scene.label_info(1).name == "floor"
    assert scene.label_by_name("wall").id == 2
    assert scene.label_by_name("ceiling") is None
    with pytest.raises(ValueError):
        scene.add_label("dup", (1, 1, 1), label_id=2)


def test_world_centres_at_half_cell():
    scene = build_scene([(0, 0, 0), (2, -1, 4)], voxel_size=0.5)
    centres = scene.world_centres()
    idx = scene.index_of((2, -1, 4))
    assert np.allclose(centres[idx], [1.25, -0.25, 2.25])


def test_index_of_missing_is_negative():
    scene = build_scene([(0, 0, 0)])
    assert scene.index_of((9, 9, 9)) == -1
    assert scene.voxel((9, 9, 9)) is None
    assert (0, 0, 0) in scene and (9, 9, 9) not in scene


# -- binary format -------------------------------------------------------------


def test_save_load_round_trip_empty_scene():
    scene = VoxelScene(0.02)
    loaded = load_scene(save_scene(scene))
    assert loaded == scene
    assert len(loaded) == 0


def test_save_load_round_trip_single_voxel():
    scene = build_scene(
        [(1, -2, 3)],
        colours=np.array([[10, 200, 30]], dtype=np.uint8),
        labels=np.array([pack_label(1, LabelGroup.USER)], dtype=np.uint8),
        label_names={1: "thing"},
    )
    loaded = load_scene(save_scene(scene))
    assert loaded == scene
    vox = loaded.voxel((1, -2, 3))
    assert vox.colour == (10, 200, 30)
    assert vox.label == pack_label(1, LabelGroup.USER)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_save_load_save_is_byte_identical(seed):
    rng = np.random.default_rng(seed)
    scene = random_scene(rng, 500, extent=40)
    blob = save_scene(scene)
    again = save_scene(load_scene(blob))
    assert blob == again


def test_voxel_size_survives_round_trip_exactly():
    scene = VoxelScene(float(np.float32(0.017)))
    loaded = load_scene(save_scene(scene))
    assert loaded.voxel_size == scene.voxel_size


def test_insertion_order_does_not_change_serialization():
    rng = np.random.default_rng(7)
    scene = random_scene(rng, 64, extent=10)
    # rebuild with rows shuffled
    order = rng.permutation(len(scene))
    other = VoxelScene(scene.voxel_size)
    for info in scene.label_table:
        if info.id != 0:
            other.add_label(info.name, info.colour, label_id=info.id)
    for i in order:
        other.add_voxel(scene.positions[i], scene.colours[i], scene.normals[i], int(scene.labels[i]))
    assert save_scene(scene) == save_scene(other)
    assert scene == other


def test_save_refuses_absent_normals():
    scene = VoxelScene(0.02)
    scene.add_voxel((0, 0, 0), (1, 1, 1), (0.0, 0.0, 0.0))
    with pytest.raises(ValueError):
        save_scene(scene)


# -- format errors carry byte offsets ----------------------------------------


def sample_blob():
    scene = build_scene(
        [(0, 0, 0), (1, 0, 0)],
        labels=np.array([pack_label(1, LabelGroup.USER), 0], dtype=np.uint8),
        label_names={1: "a"},
    )
    return save_scene(scene)


def test_bad_magic_reports_offset_zero():
    blob = b"XXXX" + sample_blob()[4:]
    with pytest.raises(SceneFormatError) as err:
        load_scene(blob)
    assert err.value.offset == 0


def test_unsupported_version_reports_offset():
    blob = bytearray(sample_blob())
    blob[4:8] = struct.pack("<I", 99)
    with pytest.raises(SceneFormatError) as err:
        load_scene(bytes(blob))
    assert err.value.offset == 4


def test_nonpositive_voxel_size_rejected():
    blob = bytearray(sample_blob())
    blob[8:12] = struct.pack("<f", 0.0)
    with pytest.raises(SceneFormatError) as err:
        load_scene(bytes(blob))
    assert err.value.offset == 8


def test_every_truncation_raises_with_offset_inside_prefix():
    blob = sample_blob()
    for cut in range(len(blob)):
        with pytest.raises(SceneFormatError) as err:
            load_scene(blob[:cut])
        assert 0 <= err.value.offset <= cut


def test_trailing_bytes_rejected():
    blob = sample_blob() + b"\x00"
    with pytest.raises(SceneFormatError) as err:
        load_scene(blob)
    assert err.value.offset == len(sample_blob())


def record_layout():
    rec = np.dtype([("pos", "<i4", 3), ("col", "u1", 3), ("nrm", "<f4", 3), ("lab", "u1")], align=False)
    blob = sample_blob()
    body_off = len(blob) - 2 * rec.itemsize
    return rec, blob, body_off


def test_invalid_packed_label_offset_points_at_record_byte():
    rec, blob, body_off = record_layout()
    mutated = bytearray(blob)
    lab_off = body_off + 1 * rec.itemsize + rec.fields["lab"][1]
    mutated[lab_off] = 0x80
    with pytest.raises(SceneFormatError) as err:
        load_scene(bytes(mutated))
    assert err.value.offset == lab_off


def test_unknown_label_id_in_record_rejected():
    rec, blob, body_off = record_layout()
    mutated = bytearray(blob)
    lab_off = body_off + rec.fields["lab"][1]
    mutated[lab_off] = pack_label(5, LabelGroup.USER)  # id 5 not in table
    with pytest.raises(SceneFormatError) as err:
        load_scene(bytes(mutated))
    assert err.value.offset == lab_off


def test_non_unit_normal_in_record_rejected_with_offset():
    rec, blob, body_off = record_layout()
    mutated = bytearray(blob)
    nrm_off = body_off + rec.fields["nrm"][1]
    mutated[nrm_off : nrm_off + 12] = struct.pack("<fff", 0.0, 0.0, 3.0)
    with pytest.raises(SceneFormatError) as err:
        load_scene(bytes(mutated))
    assert err.value.offset == nrm_off


def test_duplicate_positions_in_body_rejected():
    rec, blob, body_off = record_layout()
    mutated = bytearray(blob)
    # overwrite second record's position with the first record's position
    mutated[body_off + rec.itemsize : body_off + rec.itemsize + 12] = mutated[body_off : body_off + 12]
    with pytest.raises(SceneFormatError) as err:
        load_scene(bytes(mutated))
    assert err.value.offset == body_off


def test_label_zero_table_entry_must_be_named_unlabelled():
    blob = bytearray(sample_blob())
    # table entry 0 starts right after the 16-byte header: id, name_len, name...
    assert blob[16] == 0
    name_len = blob[17]
    assert blob[18 : 18 + name_len] == b"unlabelled"
    blob[18] = ord("x")
    with pytest.raises(SceneFormatError) as err:
        load_scene(bytes(blob))
    assert err.value.offset == 16
