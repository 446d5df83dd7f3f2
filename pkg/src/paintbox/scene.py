"""Sparse voxel scenes with packed semantic labels.

A scene stores surface voxels at integer grid positions together with an
RGB colour, a unit normal and a packed label byte.  Geometry is fixed once
loaded; only labels change at runtime.  Scenes round-trip through a small
binary format (magic ``SPVX``) with voxels in canonical (z, y, x) order.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import Enum, IntEnum

import numpy as np

MAX_LABELS = 32

_LABEL_MASK = 0x1F
_GROUP_SHIFT = 5
_GROUP_MASK = 0x03
_RESERVED_MASK = 0x80

_MAGIC = b"SPVX"
_FORMAT_VERSION = 1


class SceneFormatError(ValueError):
    """Malformed scene bytes; ``offset`` locates the first bad byte."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class LabelEncodingError(ValueError):
    """Invalid packed label byte."""


class LabelGroup(IntEnum):
    """Provenance of a voxel's label, ordered by authority at write time."""

    PROPAGATED = 0
    USER = 1
    FOREST = 2


class MarkMode(Enum):
    NORMAL = "normal"
    FORCE = "force"


UNLABELLED = 0  # pack_label(0, LabelGroup.PROPAGATED)


def pack_label(label_id: int, group: LabelGroup) -> int:
    """Pack a label id (0..31) and group into one byte."""
    if not 0 <= label_id < MAX_LABELS:
        raise LabelEncodingError(f"label id {label_id} out of range 0..{MAX_LABELS - 1}")
    group = LabelGroup(group)
    if label_id == 0 and group != LabelGroup.PROPAGATED:
        raise LabelEncodingError("label 0 is the unlabelled state and has no group")
    return label_id | (int(group) << _GROUP_SHIFT)


def unpack_label(byte: int) -> tuple[int, LabelGroup]:
    """Unpack a label byte into (label_id, group); rejects invalid bytes."""
    if not 0 <= byte <= 0xFF:
        raise LabelEncodingError(f"label byte {byte} out of range")
    if byte & _RESERVED_MASK:
        raise LabelEncodingError(f"label byte {byte:#04x} has the reserved bit set")
    label_id = byte & _LABEL_MASK
    group_bits = (byte >> _GROUP_SHIFT) & _GROUP_MASK
    if group_bits > int(LabelGroup.FOREST):
        raise LabelEncodingError(f"label byte {byte:#04x} has invalid group bits")
    if label_id == 0 and group_bits != int(LabelGroup.PROPAGATED):
        raise LabelEncodingError(f"label byte {byte:#04x} groups the unlabelled state")
    return label_id, LabelGroup(group_bits)


def is_valid_packed(byte: int) -> bool:
    try:
        unpack_label(byte)
    except LabelEncodingError:
        return False
    return True


@dataclass(frozen=True)
class LabelInfo:
    id: int
    name: str
    colour: tuple[int, int, int]


@dataclass(frozen=True)
class Voxel:
    """Read-only view of one voxel."""

    position: tuple[int, int, int]
    colour: tuple[int, int, int]
    normal: np.ndarray
    label: int  # packed byte

    @property
    def label_id(self) -> int:
        return self.label & _LABEL_MASK

    @property
    def group(self) -> LabelGroup:
        return unpack_label(self.label)[1]


@dataclass
class MarkResult:
    """Outcome of a marking operation.

    ``changed_indices`` and ``old_labels`` record the voxels whose stored
    byte actually changed and what they held before, enough to undo the
    write exactly.
    """

    changed_indices: np.ndarray
    old_labels: np.ndarray
    missing: int

    @property
    def changed(self) -> int:
        return len(self.changed_indices)


class VoxelScene:
    """Sparse voxel grid with a label table and mutable per-voxel labels."""

    def __init__(self, voxel_size: float):
        if voxel_size <= 0:
            raise ValueError("voxel size must be positive")
        # Stored at file-format precision so that a saved-and-reloaded scene
        # reproduces world coordinates (and therefore raycasts) exactly.
        self.voxel_size = float(np.float32(voxel_size))
        self._labels_by_id: dict[int, LabelInfo] = {
            0: LabelInfo(0, "unlabelled", (0, 0, 0))
        }
        self.positions = np.empty((0, 3), dtype=np.int32)
        self.colours = np.empty((0, 3), dtype=np.uint8)
        self.normals = np.empty((0, 3), dtype=np.float32)
        self.labels = np.empty(0, dtype=np.uint8)
        self._index: dict[tuple[int, int, int], int] = {}
        self._pending: list[tuple] = []
        self._pending_keys: set[tuple[int, int, int]] = set()
        self._grid = None
        self._grid_origin = None
        self._lab = None

    # -- label table ----------------------------------------------------

    @property
    def label_table(self) -> list[LabelInfo]:
        return [self._labels_by_id[k] for k in sorted(self._labels_by_id)]

    def add_label(self, name: str, colour, label_id: int | None = None) -> LabelInfo:
        """Register a semantic label; ids are dense by default."""
        if label_id is None:
            label_id = max(self._labels_by_id) + 1
        if not 0 < label_id < MAX_LABELS:
            raise ValueError(f"label id {label_id} out of range 1..{MAX_LABELS - 1}")
        if label_id in self._labels_by_id:
            raise ValueError(f"label id {label_id} already defined")
        if any(info.name == name for info in self._labels_by_id.values()):
            raise ValueError(f"label name {name!r} already defined")
        info = LabelInfo(label_id, name, tuple(int(c) for c in colour))
        self._labels_by_id[label_id] = info
        return info

    def label_info(self, label_id: int) -> LabelInfo:
        return self._labels_by_id[label_id]

    def has_label(self, label_id: int) -> bool:
        return label_id in self._labels_by_id

    def label_by_name(self, name: str) -> LabelInfo | None:
        for info in self._labels_by_id.values():
            if info.name == name:
                return info
        return None

    # -- construction ---------------------------------------------------

    def add_voxel(self, position, colour, normal, label: int = UNLABELLED) -> None:
        """Append one voxel; positions must be unique."""
        pos = (int(position[0]), int(position[1]), int(position[2]))
        if pos in self._index or pos in self._pending_keys:
            raise ValueError(f"duplicate voxel position {pos}")
        if not is_valid_packed(label):
            raise LabelEncodingError(f"invalid packed label {label:#04x}")
        if (label & _LABEL_MASK) not in self._labels_by_id:
            raise ValueError(f"label id {label & _LABEL_MASK} not in label table")
        normal = np.asarray(normal, dtype=np.float32)
        # all-zero means "no stored normal" (a normal estimator fills it in
        # downstream); anything else must be unit length
        nlen = float(np.linalg.norm(normal))
        if nlen != 0.0 and abs(nlen - 1.0) > 1e-4:
            raise ValueError(f"normal {normal} is not unit length")
        self._pending.append((pos, tuple(int(c) for c in colour), normal, label))
        self._pending_keys.add(pos)

    def _flush(self) -> None:
        if not self._pending:
            return
        base = len(self.labels)
        pos = np.array([p[0] for p in self._pending], dtype=np.int32)
        col = np.array([p[1] for p in self._pending], dtype=np.uint8)
        nrm = np.stack([p[2] for p in self._pending]).astype(np.float32)
        lab = np.array([p[3] for p in self._pending], dtype=np.uint8)
        self.positions = np.concatenate([self.positions, pos])
        self.colours = np.concatenate([self.colours, col])
        self.normals = np.concatenate([self.normals, nrm])
        self.labels = np.concatenate([self.labels, lab])
        for i, p in enumerate(self._pending):
            self._index[p[0]] = base + i
        self._pending.clear()
        self._pending_keys.clear()
        self._grid = None
        self._grid_origin = None
        self._lab = None

    # -- queries ----------------------------------------------------------

    def __len__(self) -> int:
        self._flush()
        return len(self.labels)

    def __contains__(self, position) -> bool:
        self._flush()
        return (int(position[0]), int(position[1]), int(position[2])) in self._index

    def index_of(self, position) -> int:
        """Array index of the voxel at ``position``; -1 when absent."""
        self._flush()
        return self._index.get(
            (int(position[0]), int(position[1]), int(position[2])), -1
        )

    def voxel(self, position) -> Voxel | None:
        i = self.index_of(position)
        if i < 0:
            return None
        return Voxel(
            tuple(int(v) for v in self.positions[i]),
            tuple(int(v) for v in self.colours[i]),
            self.normals[i].copy(),
            int(self.labels[i]),
        )

    def label_ids(self) -> np.ndarray:
        """Per-voxel label ids as uint8 (packed byte with group stripped)."""
        self._flush()
        return self.labels & _LABEL_MASK

    def groups(self) -> np.ndarray:
        self._flush()
        return (self.labels >> _GROUP_SHIFT) & _GROUP_MASK

    def world_centres(self) -> np.ndarray:
        """Voxel centre coordinates in metres, float64."""
        self._flush()
        return (self.positions.astype(np.float64) + 0.5) * self.voxel_size

    def grid(self):
        """Dense occupancy-index grid and its integer origin cell."""
        self._flush()
        if self._grid is None:
            if len(self.labels) == 0:
                self._grid = np.full((1, 1, 1), -1, dtype=np.int32)
                self._grid_origin = np.zeros(3, dtype=np.int64)
            else:
                lo = self.positions.min(axis=0).astype(np.int64)
                hi = self.positions.max(axis=0).astype(np.int64)
                shape = hi - lo + 1
                grid = np.full(tuple(shape), -1, dtype=np.int32)
                loc = self.positions.astype(np.int64) - lo
                grid[loc[:, 0], loc[:, 1], loc[:, 2]] = np.arange(
                    len(self.labels), dtype=np.int32
                )
                self._grid = grid
                self._grid_origin = lo
        return self._grid, self._grid_origin

    def lab_colours(self) -> np.ndarray:
        """Per-voxel CIELab colours, float32, cached."""
        self._flush()
        if self._lab is None:
            from .features import rgb_to_cielab

            self._lab = rgb_to_cielab(self.colours).astype(np.float32)
        return self._lab

    # -- labelling --------------------------------------------------------

    def mark_voxels(self, selection, new_label: int, mode: MarkMode = MarkMode.NORMAL) -> MarkResult:
        """Write ``new_label`` to the selected voxels under the marker rule.

        NORMAL mode writes when either the new group is USER or both the
        old and new groups are non-USER; FORCE writes unconditionally.
        Absent positions are skipped and counted, not errors.  Returns the
        number of voxels whose stored byte actually changed.
        """
        self._flush()
        if not is_valid_packed(new_label):
            raise LabelEncodingError(f"invalid packed label {new_label:#04x}")
        if (new_label & _LABEL_MASK) not in self._labels_by_id:
            raise ValueError(f"label id {new_label & _LABEL_MASK} not in label table")
        idx, missing = self._selection_indices(selection)
        if idx.size == 0:
            return MarkResult(
                np.empty(0, dtype=np.int64), np.empty(0, dtype=np.uint8), missing
            )
        idx = np.unique(idx)
        old = self.labels[idx]
        if mode is MarkMode.FORCE:
            allowed = np.ones(idx.size, dtype=bool)
        else:
            old_group = (old >> _GROUP_SHIFT) & _GROUP_MASK
            new_is_user = ((new_label >> _GROUP_SHIFT) & _GROUP_MASK) == int(LabelGroup.USER)
            allowed = new_is_user | (old_group != int(LabelGroup.USER))
        write = allowed & (old != np.uint8(new_label))
        changed = idx[write]
        before = old[write].copy()
        self.labels[changed] = np.uint8(new_label)
        return MarkResult(changed, before, missing)

    def write_labels(self, indices: np.ndarray, packed: np.ndarray) -> None:
        """Force-write packed bytes at array indices (undo path)."""
        self.labels[indices] = packed

    def _selection_indices(self, selection) -> tuple[np.ndarray, int]:
        if isinstance(selection, np.ndarray) and selection.ndim == 2:
            rows = selection
        else:
            rows = np.asarray(list(selection), dtype=np.int64).reshape(-1, 3)
        idx = np.fromiter(
            (
                self._index.get((int(r[0]), int(r[1]), int(r[2])), -1)
                for r in rows
            ),
            dtype=np.int64,
            count=len(rows),
        )
        missing = int((idx < 0).sum())
        return idx[idx >= 0], missing

    # -- copies and equality ----------------------------------------------

    def copy(self) -> "VoxelScene":
        self._flush()
        dup = VoxelScene(self.voxel_size)
        dup._labels_by_id = dict(self._labels_by_id)
        dup.positions = self.positions.copy()
        dup.colours = self.colours.copy()
        dup.normals = self.normals.copy()
        dup.labels = self.labels.copy()
        dup._index = dict(self._index)
        return dup

    def __eq__(self, other) -> bool:
        if not isinstance(other, VoxelScene):
            return NotImplemented
        self._flush()
        other._flush()
        if self.voxel_size != other.voxel_size:
            return False
        if self._labels_by_id != other._labels_by_id:
            return False
        if len(self.labels) != len(other.labels):
            return False
        a = _canonical_order(self.positions)
        b = _canonical_order(other.positions)
        return (
            np.array_equal(self.positions[a], other.positions[b])
            and np.array_equal(self.colours[a], other.colours[b])
            and np.array_equal(self.normals[a], other.normals[b])
            and np.array_equal(self.labels[a], other.labels[b])
        )

    __hash__ = None


def _canonical_order(positions: np.ndarray) -> np.ndarray:
    """Sort order by (z, y, x)."""
    return np.lexsort((positions[:, 0], positions[:, 1], positions[:, 2]))


def save_scene(scene: VoxelScene) -> bytes:
    """Serialize a scene to the canonical little-endian binary form."""
    scene._flush()
    out = bytearray()
    out += _MAGIC
    out += struct.pack("<I", _FORMAT_VERSION)
    out += struct.pack("<f", scene.voxel_size)
    table = scene.label_table
    out += struct.pack("<I", len(table))
    for info in table:
        name = info.name.encode("utf-8")
        if len(name) > 255:
            raise ValueError(f"label name too long: {info.name!r}")
        out += struct.pack("<BB", info.id, len(name))
        out += name
        out += struct.pack("<BBB", *info.colour)
    norms = np.linalg.norm(scene.normals.astype(np.float64), axis=1)
    if (np.abs(norms - 1.0) > 1e-4).any():
        raise ValueError("cannot serialize voxels with absent or non-unit normals")
    order = _canonical_order(scene.positions)
    out += struct.pack("<Q", len(order))
    pos = scene.positions[order].astype("<i4")
    col = scene.colours[order]
    nrm = scene.normals[order].astype("<f4")
    lab = scene.labels[order]
    body = np.empty(
        len(order),
        dtype=np.dtype(
            [("pos", "<i4", 3), ("col", "u1", 3), ("nrm", "<f4", 3), ("lab", "u1")],
            align=False,
        ),
    )
    body["pos"] = pos
    body["col"] = col
    body["nrm"] = nrm
    body["lab"] = lab
    out += body.tobytes()
    return bytes(out)


def load_scene(data: bytes) -> VoxelScene:
    """Parse scene bytes; raises SceneFormatError with a byte offset."""
    off = 0

    def need(n: int, what: str) -> bytes:
        nonlocal off
        if off + n > len(data):
            raise SceneFormatError(f"truncated {what}", off)
        chunk = data[off : off + n]
        off += n
        return chunk

    if need(4, "magic") != _MAGIC:
        raise SceneFormatError("bad magic", 0)
    (version,) = struct.unpack("<I", need(4, "version"))
    if version != _FORMAT_VERSION:
        raise SceneFormatError(f"unsupported version {version}", off - 4)
    (voxel_size,) = struct.unpack("<f", need(4, "voxel size"))
    if not voxel_size > 0:
        raise SceneFormatError("voxel size must be positive", off - 4)
    scene = VoxelScene(float(voxel_size))
    (count,) = struct.unpack("<I", need(4, "label table count"))
    for _ in range(count):
        entry_off = off
        label_id, name_len = struct.unpack("<BB", need(2, "label entry"))
        name = need(name_len, "label name").decode("utf-8", errors="strict")
        colour = struct.unpack("<BBB", need(3, "label colour"))
        if label_id == 0:
            if name != "unlabelled":
                raise SceneFormatError("label 0 must be 'unlabelled'", entry_off)
            continue
        try:
            scene.add_label(name, colour, label_id=label_id)
        except ValueError as exc:
            raise SceneFormatError(str(exc), entry_off) from exc
    (nvox,) = struct.unpack("<Q", need(8, "voxel count"))
    rec = np.dtype(
        [("pos", "<i4", 3), ("col", "u1", 3), ("nrm", "<f4", 3), ("lab", "u1")],
        align=False,
    )
    body_off = off
    body = need(rec.itemsize * nvox, "voxel records")
    if off != len(data):
        raise SceneFormatError("trailing bytes after voxel records", off)
    arr = np.frombuffer(body, dtype=rec)
    labels = arr["lab"]
    for i, byte in enumerate(labels):
        if not is_valid_packed(int(byte)):
            raise SceneFormatError(
                f"invalid packed label {int(byte):#04x}",
                body_off + i * rec.itemsize + rec.fields["lab"][1],
            )
        if (int(byte) & _LABEL_MASK) not in scene._labels_by_id:
            raise SceneFormatError(
                f"label id {int(byte) & _LABEL_MASK} missing from label table",
                body_off + i * rec.itemsize + rec.fields["lab"][1],
            )
    norms = np.linalg.norm(arr["nrm"].astype(np.float64), axis=1)
    bad = np.flatnonzero(np.abs(norms - 1.0) > 1e-4)
    if bad.size:
        i = int(bad[0])
        raise SceneFormatError(
            f"non-unit normal in voxel record {i}",
            body_off + i * rec.itemsize + rec.fields["nrm"][1],
        )
    pos = arr["pos"].astype(np.int32)
    keys = [tuple(int(v) for v in row) for row in pos]
    if len(set(keys)) != len(keys):
        raise SceneFormatError("duplicate voxel positions", body_off)
    scene.positions = pos
    scene.colours = arr["col"].astype(np.uint8)
    scene.normals = arr["nrm"].astype(np.float32)
    scene.labels = labels.astype(np.uint8)
    scene._index = {k: i for i, k in enumerate(keys)}
    return scene
