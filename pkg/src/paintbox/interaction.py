"""Picking, selections and undoable labelling commands.

Labelling goes through command objects so every write is reversible: a
command records, at execute time, exactly which voxels changed and what
they held before, and undo force-writes those bytes back.  The manager
keeps executed and undone stacks with the usual semantics (executing
clears the undone stack; undo and redo move one element between them).
"""

from __future__ import annotations

import logging

import numpy as np

from .raycaster import RaycastResult
from .scene import MarkMode, MarkResult, VoxelScene

log = logging.getLogger(__name__)


def pick(scene: VoxelScene, result: RaycastResult, pixel) -> tuple[int, int, int] | None:
    """Voxel position under (row, col) in a raycast result; None on a miss."""
    return result.voxel_position(scene, pixel)


def voxel_to_cube(selection, radius: int) -> np.ndarray:
    """Expand each position to the cube of side 2*radius + 1 around it.

    Order is preserved: all offsets of the first position (lexicographic
    in dx, dy, dz), then the second, and so on.  Duplicates are kept;
    positions outside the scene are resolved later, at marking time.
    """
    if radius < 0:
        raise ValueError("radius must be non-negative")
    rows = np.asarray(list(selection), dtype=np.int64).reshape(-1, 3)
    r = int(radius)
    span = np.arange(-r, r + 1, dtype=np.int64)
    dx, dy, dz = np.meshgrid(span, span, span, indexing="ij")
    offsets = np.stack([dx.ravel(), dy.ravel(), dz.ravel()], axis=1)
    return (rows[:, None, :] + offsets[None, :, :]).reshape(-1, 3)


class Command:
    """One reversible action."""

    description = "command"

    def execute(self) -> None:
        raise NotImplementedError

    def undo(self) -> None:
        raise NotImplementedError


class LabelCommand(Command):
    """Mark a selection with one packed label byte."""

    def __init__(
        self,
        scene: VoxelScene,
        selection,
        packed_label: int,
        mode: MarkMode = MarkMode.NORMAL,
        description: str | None = None,
    ):
        self.scene = scene
        self.selection = np.asarray(list(selection), dtype=np.int64).reshape(-1, 3)
        self.packed_label = int(packed_label)
        self.mode = mode
        self.description = description or f"label {len(self.selection)} voxels"
        self.result: MarkResult | None = None

    def execute(self) -> None:
        self.result = self.scene.mark_voxels(self.selection, self.packed_label, self.mode)

    def undo(self) -> None:
        if self.result is None:
            raise RuntimeError("undo before execute")
        self.scene.write_labels(self.result.changed_indices, self.result.old_labels)
        self.result = None

    def to_record(self) -> dict:
        record = {
            "kind": "label",
            "selection": self.selection.tolist(),
            "packed": self.packed_label,
            "mode": self.mode.name,
            "description": self.description,
        }
        if self.result is not None:
            # Voxels are identified by position, not array index: a scene
            # reloaded from disk holds the same voxels in canonical order.
            changed = self.result.changed_indices
            record["result"] = {
                "changed_positions": self.scene.positions[changed].tolist(),
                "old_labels": self.result.old_labels.tolist(),
                "missing": self.result.missing,
            }
        return record


class SeqCommand(Command):
    """A sequence of commands executed as one unit."""

    def __init__(self, commands, description: str = "sequence"):
        self.commands = list(commands)
        self.description = description

    def execute(self) -> None:
        for cmd in self.commands:
            cmd.execute()

    def undo(self) -> None:
        for cmd in reversed(self.commands):
            cmd.undo()

    def to_record(self) -> dict:
        return {
            "kind": "sequence",
            "description": self.description,
            "commands": [cmd.to_record() for cmd in self.commands],
        }


def command_from_record(scene: VoxelScene, record: dict) -> Command:
    """Rebuild a command (and any captured undo state) against ``scene``."""
    kind = record.get("kind")
    if kind == "label":
        command = LabelCommand(
            scene,
            record["selection"],
            record["packed"],
            MarkMode[record["mode"]],
            record.get("description"),
        )
        if "result" in record:
            res = record["result"]
            indices = np.asarray(
                [scene.index_of(p) for p in res["changed_positions"]], dtype=np.int64
            )
            if (indices < 0).any():
                raise ValueError("command history references voxels absent from scene")
            command.result = MarkResult(
                indices,
                np.asarray(res["old_labels"], dtype=np.uint8),
                int(res["missing"]),
            )
        return command
    if kind == "sequence":
        parts = [command_from_record(scene, r) for r in record["commands"]]
        return SeqCommand(parts, record.get("description", "sequence"))
    raise ValueError(f"unknown command record kind {kind!r}")


class CommandManager:
    """Executed/undone stacks with execute, undo, redo and reset."""

    def __init__(self):
        self._executed: list[Command] = []
        self._undone: list[Command] = []

    @property
    def executed_count(self) -> int:
        return len(self._executed)

    @property
    def undone_count(self) -> int:
        return len(self._undone)

    @property
    def can_undo(self) -> bool:
        return bool(self._executed)

    @property
    def can_redo(self) -> bool:
        return bool(self._undone)

    def execute_command(self, command: Command) -> Command:
        """Run a command and push it; any redo history is discarded."""
        command.execute()
        self._executed.append(command)
        self._undone.clear()
        return command

    def undo(self) -> bool:
        if not self._executed:
            log.warning("undo requested with empty history")
            return False
        command = self._executed.pop()
        command.undo()
        self._undone.append(command)
        return True

    def redo(self) -> bool:
        if not self._undone:
            log.warning("redo requested with nothing undone")
            return False
        command = self._undone.pop()
        command.execute()
        self._executed.append(command)
        return True

    def reset(self) -> None:
        """Drop both stacks without touching scene state."""
        self._executed.clear()
        self._undone.clear()
