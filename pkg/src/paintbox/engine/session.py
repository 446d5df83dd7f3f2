"""Interactive labelling session: the per-frame loop and its state.

Each frame drains queued commands, raycasts the scene from the current
camera, runs the active mode's section (propagation, training, prediction,
or nothing) and composites the display image.  Picks always resolve
against the previous frame's raycast, matching what the user saw when
they clicked.  All per-frame randomness derives from (master seed, frame
index), so a session replays identically from a snapshot.
"""

from __future__ import annotations

import io
import json
import logging
import time
import zipfile
from dataclasses import asdict, dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .. import features, kernels
from ..forest import RandomForest
from ..interaction import CommandManager, LabelCommand, command_from_record, voxel_to_cube
from ..propagation import propagate_step, revert_propagated
from ..raycaster import Intrinsics, RaycastResult, composite_frame, raycast
from ..rigging import CameraPose, SimpleCamera, move_camera
from ..sampling import sample_for_prediction, sample_for_training
from ..scene import (
    LabelGroup,
    MarkMode,
    UNLABELLED,
    VoxelScene,
    load_scene,
    pack_label,
    save_scene,
)
from .config import EngineConfig

log = logging.getLogger(__name__)


class Mode(Enum):
    NORMAL = "normal"
    PROPAGATION = "propagation"
    TRAINING = "training"
    PREDICTION = "prediction"
    TRAINING_AND_PREDICTION = "training_and_prediction"
    FEATURE_INSPECTION = "feature_inspection"


@dataclass
class FrameReport:
    frame: int
    mode: str
    current_label: int
    trained: int = 0
    splits: int = 0
    predicted: int = 0
    propagated: int = 0
    picked: int = 0
    raycast_ms: float = 0.0
    section_ms: float = 0.0
    total_ms: float = 0.0
    executed_commands: int = 0
    undo_depth: int = 0
    redo_depth: int = 0
    notes: list | None = None
    config: dict | None = None

    def to_dict(self) -> dict:
        out = asdict(self)
        out["notes"] = list(self.notes or [])
        return out

    def deterministic_dict(self) -> dict:
        """Report contents minus wall-clock timings, for replay comparison."""
        out = self.to_dict()
        for key in ("raycast_ms", "section_ms", "total_ms"):
            out.pop(key)
        return out


class CommandError(ValueError):
    """A queued command failed validation."""


def _default_pose(scene: VoxelScene) -> CameraPose:
    if len(scene) == 0:
        return CameraPose.look_at((0.0, -1.0, 1.0), (0.0, 0.0, 0.0))
    centres = scene.world_centres()
    lo = centres.min(axis=0)
    hi = centres.max(axis=0)
    mid = (lo + hi) / 2.0
    span = max(float(np.max(hi[:2] - lo[:2])), 1.0)
    eye = mid + np.array([0.0, -0.9 * span, 0.55 * span + (hi[2] - mid[2])])
    return CameraPose.look_at(eye, mid)


class Session:
    """One interactive scene-labelling session."""

    def __init__(
        self,
        scene: VoxelScene,
        config: EngineConfig | None = None,
        camera: SimpleCamera | None = None,
    ):
        self.scene = scene
        self.config = config or EngineConfig()
        forest_settings = self.config.forest
        if forest_settings.feature_dim != features.descriptor_length():
            raise ValueError(
                f"engine forests take {features.descriptor_length()}-dim descriptors"
            )
        self.forest = RandomForest(forest_settings)
        self.camera = camera or SimpleCamera(_default_pose(scene))
        self.commands = CommandManager()
        self.mode = Mode.NORMAL
        self.current_label = 0
        self.frame = 0
        self.last_raycast: RaycastResult | None = None
        self._queue: list[tuple] = []
        self._descriptor_cache: dict[int, np.ndarray] = {}
        self.last_report: FrameReport | None = None
        self.last_image: np.ndarray | None = None

    # -- command intake ----------------------------------------------------

    def queue_text(self, text: str) -> dict:
        """Validate and queue a text command; returns a parse description."""
        parsed = self._parse_text(text)
        self._queue.append(("text", parsed))
        return {"queued": True, "command": parsed}

    def queue_pick(self, pixel, radius: int = 0) -> dict:
        row, col = int(pixel[0]), int(pixel[1])
        if radius < 0:
            raise CommandError("radius must be non-negative")
        self._queue.append(("pick", (row, col, int(radius))))
        return {"queued": True, "pixel": [row, col], "radius": int(radius)}

    def queue_touch(self, pixels) -> dict:
        pts = [(int(p[0]), int(p[1])) for p in pixels]
        self._queue.append(("touch", pts))
        return {"queued": True, "points": len(pts)}

    def queue_motion(self, motion) -> dict:
        self._queue.append(("motion", motion))
        return {"queued": True}

    def _parse_text(self, text: str) -> dict:
        words = text.strip().split()
        if not words:
            raise CommandError("empty command")
        verb = words[0].lower()
        if verb == "label":
            if len(words) < 2:
                raise CommandError("usage: label <name>")
            name = " ".join(words[1:])
            info = self.scene.label_by_name(name)
            if info is None:
                raise CommandError(f"unknown label {name!r}")
            return {"verb": "label", "label_id": info.id, "name": info.name}
        if verb == "mode":
            if len(words) != 2:
                raise CommandError("usage: mode <name>")
            try:
                mode = Mode(words[1].lower())
            except ValueError:
                valid = ", ".join(m.value for m in Mode)
                raise CommandError(f"unknown mode {words[1]!r}; one of: {valid}") from None
            return {"verb": "mode", "mode": mode.value}
        if verb in ("undo", "redo", "revert"):
            if len(words) != 1:
                raise CommandError(f"usage: {verb}")
            return {"verb": verb}
        if verb == "propagate":
            if len(words) != 2 or words[1].lower() not in ("on", "off"):
                raise CommandError("usage: propagate on|off")
            return {"verb": "propagate", "enabled": words[1].lower() == "on"}
        raise CommandError(f"unknown command {words[0]!r}")

    # -- frame loop ---------------------------------------------------------

    def step(self) -> FrameReport:
        """Advance one frame; on failure the pre-frame state is restored."""
        snapshot = self._snapshot()
        try:
            return self._step_inner()
        except Exception:
            self._restore(snapshot)
            raise

    def _snapshot(self) -> dict:
        return {
            "labels": self.scene.labels.copy(),
            "mode": self.mode,
            "current_label": self.current_label,
            "frame": self.frame,
            "pose": self.camera.pose(),
            "executed": list(self.commands._executed),
            "undone": list(self.commands._undone),
        }

    def _restore(self, snap: dict) -> None:
        self.scene.labels[:] = snap["labels"]
        self.mode = snap["mode"]
        self.current_label = snap["current_label"]
        self.frame = snap["frame"]
        self.camera.set_pose(snap["pose"])
        self.commands._executed = snap["executed"]
        self.commands._undone = snap["undone"]

    def _frame_rng(self) -> np.random.Generator:
        return np.random.default_rng(
            np.random.SeedSequence(entropy=self.config.session.seed, spawn_key=(self.frame,))
        )

    def _step_inner(self) -> FrameReport:
        t0 = time.perf_counter()
        report = FrameReport(
            frame=self.frame,
            mode=self.mode.value,
            current_label=self.current_label,
            notes=[],
        )
        self._drain_queue(report)
        report.mode = self.mode.value
        report.current_label = self.current_label

        r0 = time.perf_counter()
        render = self.config.render
        intr = Intrinsics(render.width, render.height, render.fx, render.fy)
        rc = raycast(
            self.scene,
            self.camera.pose(),
            intr,
            near=render.near,
            far=render.far,
        )
        report.raycast_ms = (time.perf_counter() - r0) * 1000.0

        s0 = time.perf_counter()
        rng = self._frame_rng()
        if self.mode is Mode.PROPAGATION:
            if self.current_label > 0:
                report.propagated = propagate_step(
                    self.scene, rc, self.current_label, self.config.propagation
                )
            else:
                report.notes.append("propagation idle: no current label")
        elif self.mode is Mode.TRAINING:
            self._train(rc, rng, report)
        elif self.mode is Mode.PREDICTION:
            self._predict(rc, rng, report)
        elif self.mode is Mode.TRAINING_AND_PREDICTION:
            if self.frame % 2 == 0:
                self._train(rc, rng, report)
            else:
                self._predict(rc, rng, report)
        report.section_ms = (time.perf_counter() - s0) * 1000.0

        self.last_image = composite_frame(
            rc,
            self.scene,
            alpha=render.overlay_alpha,
            median_filter=render.median_filter,
        )
        self.last_raycast = rc
        report.executed_commands = self.commands.executed_count
        report.undo_depth = self.commands.executed_count
        report.redo_depth = self.commands.undone_count
        report.config = self.config.to_dict()
        report.total_ms = (time.perf_counter() - t0) * 1000.0
        self.frame += 1
        self.last_report = report
        return report

    def _drain_queue(self, report: FrameReport) -> None:
        queue, self._queue = self._queue, []
        for kind, payload in queue:
            if kind == "text":
                self._run_text(payload, report)
            elif kind == "pick":
                self._run_pick(payload, report)
            elif kind == "touch":
                self._run_touch(payload, report)
            elif kind == "motion":
                move_camera(self.camera, payload)

    def _run_text(self, cmd: dict, report: FrameReport) -> None:
        verb = cmd["verb"]
        if verb == "label":
            self.current_label = cmd["label_id"]
        elif verb == "mode":
            self.mode = Mode(cmd["mode"])
        elif verb == "undo":
            if not self.commands.undo():
                report.notes.append("undo ignored: empty history")
        elif verb == "redo":
            if not self.commands.redo():
                report.notes.append("redo ignored: nothing undone")
        elif verb == "revert":
            if self.current_label > 0:
                count = revert_propagated(self.scene, self.current_label)
                report.notes.append(f"reverted {count} propagated voxels")
            else:
                report.notes.append("revert ignored: no current label")
        elif verb == "propagate":
            self.mode = Mode.PROPAGATION if cmd["enabled"] else Mode.NORMAL

    def _run_pick(self, payload: tuple, report: FrameReport) -> None:
        row, col, radius = payload
        if self.last_raycast is None:
            report.notes.append("pick ignored: no frame rendered yet")
            return
        position = self.last_raycast.voxel_position(self.scene, (row, col))
        if position is None:
            report.notes.append(f"pick missed at ({row}, {col})")
            return
        if self.mode is Mode.FEATURE_INSPECTION:
            meta = features.dump_feature_inspection(
                self.scene, position, Path(self.config.session.inspection_dir)
            )
            report.notes.append(f"inspected {position}: {json.dumps(meta)}")
            return
        self._mark_selection([position], radius, report)

    def _run_touch(self, payload: list, report: FrameReport) -> None:
        if self.last_raycast is None:
            report.notes.append("touch ignored: no frame rendered yet")
            return
        positions = []
        for row, col in payload:
            pos = self.last_raycast.voxel_position(self.scene, (row, col))
            if pos is not None:
                positions.append(pos)
        if not positions:
            report.notes.append("touch hit no voxels")
            return
        self._mark_selection(positions, 0, report)

    def _mark_selection(self, positions: list, radius: int, report: FrameReport) -> None:
        selection = voxel_to_cube(positions, radius) if radius else positions
        if self.current_label == 0:
            packed, mode = UNLABELLED, MarkMode.FORCE
        else:
            packed, mode = pack_label(self.current_label, LabelGroup.USER), MarkMode.NORMAL
        command = LabelCommand(self.scene, selection, packed, mode)
        self.commands.execute_command(command)
        report.picked += command.result.changed

    # -- training and prediction -------------------------------------------

    def _descriptors_for(self, indices: np.ndarray) -> np.ndarray:
        """Descriptor rows for voxel indices, memoized per voxel.

        Geometry and colours never change after load, so a voxel's
        descriptor is a constant; the cache is cleared wholesale if it
        outgrows its bound.
        """
        cache = self._descriptor_cache
        missing = [int(i) for i in indices if int(i) not in cache]
        if missing:
            if len(cache) + len(missing) > self.config.session.descriptor_cache_entries:
                cache.clear()
            rows, valid = features.compute_descriptors(self.scene, missing)
            for i, row in zip(missing, rows):
                cache[i] = row
            del valid
        return np.stack([cache[int(i)] for i in indices])

    def _train(self, rc: RaycastResult, rng: np.random.Generator, report: FrameReport) -> None:
        samples = sample_for_training(
            rc, self.scene, rng, quota=self.config.session.training_quota
        )
        if samples:
            all_idx = np.concatenate([samples[k] for k in sorted(samples)])
            all_lab = np.concatenate(
                [np.full(len(samples[k]), k, dtype=np.int64) for k in sorted(samples)]
            )
            descriptors = self._descriptors_for(all_idx)
            self.forest.add_examples(descriptors, all_lab)
            report.trained = len(all_idx)
        report.splits = self.forest.split_step()

    def _predict(self, rc: RaycastResult, rng: np.random.Generator, report: FrameReport) -> None:
        drawn = sample_for_prediction(
            rc, rng, count=self.config.session.prediction_samples
        )
        if drawn.size == 0:
            return
        unique = np.unique(drawn)
        descriptors = self._descriptors_for(unique)
        labels = self.forest.predict_label(descriptors)
        changed = 0
        for label in np.unique(labels):
            if label == 0:
                continue  # an untrained forest must not paint "unlabelled"
            rows = unique[labels == label]
            outcome = self.scene.mark_voxels(
                self.scene.positions[rows],
                pack_label(int(label), LabelGroup.FOREST),
                MarkMode.NORMAL,
            )
            changed += outcome.changed
        report.predicted = changed

    # -- state and persistence ----------------------------------------------

    def state(self) -> dict:
        pose = self.camera.pose()
        return {
            "frame": self.frame,
            "mode": self.mode.value,
            "current_label": self.current_label,
            "labels": [
                {"id": info.id, "name": info.name, "colour": list(info.colour)}
                for info in self.scene.label_table
            ],
            "voxels": len(self.scene),
            "undo_depth": self.commands.executed_count,
            "redo_depth": self.commands.undone_count,
            "camera": {
                "position": pose.position.tolist(),
                "look": pose.n.tolist(),
                "up": pose.u.tolist(),
                "right": pose.v.tolist(),
            },
            "kernel_backend": kernels.BACKEND,
            "examples_trained": int(self.forest.class_counts.sum()),
        }

    def save_session(self, path) -> None:
        """Write scene, forest and session scalars as one deterministic zip."""
        payload = {
            "version": 1,
            "frame": self.frame,
            "mode": self.mode.value,
            "current_label": self.current_label,
            "camera": self.camera.pose().matrix().reshape(-1).tolist(),
            "config": self.config.to_dict(),
            "history": {
                "executed": [c.to_record() for c in self.commands._executed],
                "undone": [c.to_record() for c in self.commands._undone],
            },
        }
        entries = [
            ("session.json", json.dumps(payload, sort_keys=True).encode()),
            ("scene.spvx", save_scene(self.scene)),
            ("forest.bin", self.forest.save_checkpoint()),
        ]
        buf = io.BytesIO()
        with zipfile.ZipFile(buf, "w", zipfile.ZIP_STORED) as zf:
            for name, data in entries:
                info = zipfile.ZipInfo(name, date_time=(1980, 1, 1, 0, 0, 0))
                zf.writestr(info, data)
        Path(path).write_bytes(buf.getvalue())

    @classmethod
    def load_session(cls, path) -> "Session":
        from .config import _apply

        with zipfile.ZipFile(path) as zf:
            payload = json.loads(zf.read("session.json"))
            scene = load_scene(zf.read("scene.spvx"))
            forest_bytes = zf.read("forest.bin")
        if payload.get("version") != 1:
            raise ValueError("unsupported session version")
        config = EngineConfig()
        for section, body in payload["config"].items():
            for key, value in body.items():
                config = _apply(config, section, key, value)
        matrix = np.asarray(payload["camera"], dtype=np.float64).reshape(4, 4)
        session = cls(scene, config, SimpleCamera(CameraPose.from_matrix(matrix)))
        session.forest = RandomForest.load_checkpoint(forest_bytes)
        session.mode = Mode(payload["mode"])
        session.current_label = int(payload["current_label"])
        session.frame = int(payload["frame"])
        history = payload.get("history", {})
        session.commands._executed = [
            command_from_record(scene, r) for r in history.get("executed", [])
        ]
        session.commands._undone = [
            command_from_record(scene, r) for r in history.get("undone", [])
        ]
        return session
