"""Camera rigs: poses, simple moveable cameras, derived and composite rigs.

A pose is a position plus an orthonormal frame: ``n`` looks along the view
direction, ``u`` points up and ``v`` points right.  Camera space is
x-right, y-up, z-forward; ``matrix()`` maps camera to world.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_ORTHO_TOL = 1e-5


class RigError(ValueError):
    pass


def _unit(vec) -> np.ndarray:
    vec = np.asarray(vec, dtype=np.float64)
    norm = np.linalg.norm(vec)
    if norm == 0.0:
        raise RigError("zero-length axis")
    return vec / norm


@dataclass
class CameraPose:
    position: np.ndarray
    n: np.ndarray  # look
    u: np.ndarray  # up
    v: np.ndarray  # right

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64).copy()
        self.n = np.asarray(self.n, dtype=np.float64).copy()
        self.u = np.asarray(self.u, dtype=np.float64).copy()
        self.v = np.asarray(self.v, dtype=np.float64).copy()
        for name, vec in (("n", self.n), ("u", self.u), ("v", self.v)):
            if abs(np.linalg.norm(vec) - 1.0) > _ORTHO_TOL:
                raise RigError(f"{name} is not unit length")
        if (
            abs(self.n @ self.u) > _ORTHO_TOL
            or abs(self.n @ self.v) > _ORTHO_TOL
            or abs(self.u @ self.v) > _ORTHO_TOL
        ):
            raise RigError("camera frame is not orthogonal")

    @classmethod
    def look_at(cls, position, target, up=(0.0, 0.0, 1.0)) -> "CameraPose":
        position = np.asarray(position, dtype=np.float64)
        n = _unit(np.asarray(target, dtype=np.float64) - position)
        up = np.asarray(up, dtype=np.float64)
        u = up - (up @ n) * n
        if np.linalg.norm(u) < 1e-9:
            # looking straight along up: pick any perpendicular
            alt = np.zeros(3)
            alt[int(np.argmin(np.abs(n)))] = 1.0
            u = alt - (alt @ n) * n
        u = _unit(u)
        v = np.cross(u, n)
        return cls(position, n, u, v)

    def basis(self) -> np.ndarray:
        """3x3 matrix with columns (v, u, n): camera axes in world frame."""
        return np.stack([self.v, self.u, self.n], axis=1)

    def matrix(self) -> np.ndarray:
        """4x4 camera-to-world transform, row-major."""
        m = np.eye(4)
        m[:3, :3] = self.basis()
        m[:3, 3] = self.position
        return m

    @classmethod
    def from_matrix(cls, m) -> "CameraPose":
        m = np.asarray(m, dtype=np.float64)
        if m.shape != (4, 4):
            raise RigError("pose matrix must be 4x4")
        return cls(m[:3, 3], m[:3, 2], m[:3, 1], m[:3, 0])

    def copy(self) -> "CameraPose":
        return CameraPose(self.position, self.n, self.u, self.v)

    def axis(self, name: str) -> np.ndarray:
        try:
            return {"n": self.n, "u": self.u, "v": self.v}[name]
        except KeyError:
            raise RigError(f"unknown camera axis {name!r}") from None


@dataclass(frozen=True)
class Translate:
    axis: object  # 'n' | 'u' | 'v' or a world-space 3-vector
    distance: float


@dataclass(frozen=True)
class Rotate:
    axis: object
    angle: float  # radians, right-handed about the axis


Motion = Translate | Rotate


def _rotation_matrix(axis: np.ndarray, angle: float) -> np.ndarray:
    axis = _unit(axis)
    x, y, z = axis
    c, s = np.cos(angle), np.sin(angle)
    cc = 1.0 - c
    return np.array(
        [
            [c + x * x * cc, x * y * cc - z * s, x * z * cc + y * s],
            [y * x * cc + z * s, c + y * y * cc, y * z * cc - x * s],
            [z * x * cc - y * s, z * y * cc + x * s, c + z * z * cc],
        ]
    )


def _reorthonormalize(n: np.ndarray, u: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    n = _unit(n)
    u = _unit(u - (u @ n) * n)
    v = np.cross(u, n)
    return n, u, v


class Camera:
    """Anything that can report a pose."""

    def pose(self) -> CameraPose:
        raise NotImplementedError

    @property
    def moveable(self) -> bool:
        return False


class MoveableCamera(Camera):
    @property
    def moveable(self) -> bool:
        return True

    def translate(self, axis, distance: float) -> None:
        raise NotImplementedError

    def rotate(self, axis, angle: float) -> None:
        raise NotImplementedError


class SimpleCamera(MoveableCamera):
    """A free camera holding its own pose."""

    def __init__(self, pose: CameraPose):
        self._pose = pose.copy()

    def pose(self) -> CameraPose:
        return self._pose.copy()

    def set_pose(self, pose: CameraPose) -> None:
        self._pose = pose.copy()

    def _resolve_axis(self, axis) -> np.ndarray:
        if isinstance(axis, str):
            return self._pose.axis(axis)
        return _unit(axis)

    def translate(self, axis, distance: float) -> None:
        self._pose.position = self._pose.position + self._resolve_axis(axis) * float(distance)

    def rotate(self, axis, angle: float) -> None:
        """Rotate the orientation in place about an axis through the camera."""
        rot = _rotation_matrix(self._resolve_axis(axis), float(angle))
        n = rot @ self._pose.n
        u = rot @ self._pose.u
        n, u, v = _reorthonormalize(n, u)
        self._pose = CameraPose(self._pose.position, n, u, v)


class DerivedCamera(Camera):
    """A camera rigidly mounted relative to a base camera; not moveable.

    ``rotation`` and ``translation`` are expressed in the base camera's
    space (x-right, y-up, z-forward).
    """

    def __init__(self, base: Camera, rotation=None, translation=None):
        self.base = base
        self.rotation = (
            np.eye(3) if rotation is None else np.asarray(rotation, dtype=np.float64)
        )
        if self.rotation.shape != (3, 3):
            raise RigError("rotation must be 3x3")
        if not np.allclose(self.rotation @ self.rotation.T, np.eye(3), atol=1e-6):
            raise RigError("rotation must be orthonormal")
        self.translation = (
            np.zeros(3) if translation is None else np.asarray(translation, dtype=np.float64)
        )

    def pose(self) -> CameraPose:
        base = self.base.pose()
        b = base.basis()
        basis = b @ self.rotation
        position = base.position + b @ self.translation
        n, u, v = _reorthonormalize(basis[:, 2], basis[:, 1])
        return CameraPose(position, n, u, v)


class CompositeCamera(MoveableCamera):
    """A named bundle of cameras moved through its primary."""

    def __init__(self, primary_name: str, cameras: dict[str, Camera]):
        if primary_name not in cameras:
            raise RigError(f"primary camera {primary_name!r} not in rig")
        primary = cameras[primary_name]
        if not primary.moveable:
            raise RigError("primary camera must be moveable")
        self.primary_name = primary_name
        self.cameras = dict(cameras)

    @property
    def primary(self) -> MoveableCamera:
        return self.cameras[self.primary_name]

    def pose(self, name: str | None = None) -> CameraPose:
        return self.cameras[name or self.primary_name].pose()

    def translate(self, axis, distance: float) -> None:
        self.primary.translate(axis, distance)

    def rotate(self, axis, angle: float) -> None:
        self.primary.rotate(axis, angle)


def move_camera(camera: Camera, motion: Motion) -> Camera:
    """Apply a motion to a moveable camera and return it."""
    if not camera.moveable:
        raise RigError("camera is not moveable")
    if isinstance(motion, Translate):
        camera.translate(motion.axis, motion.distance)
    elif isinstance(motion, Rotate):
        camera.rotate(motion.axis, motion.angle)
    else:
        raise RigError(f"unknown motion {motion!r}")
    return camera
