"""Scene raycasting and frame compositing.

Rays are traced through the scene's occupancy grid cell by cell.  For the
perspective projection the ray parameter equals depth along the look axis
(directions are normalized to unit forward component); the orthographic
projection used by touch detection casts parallel unit rays, so the
parameter is metric distance in both cases.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from PIL import Image

from . import kernels
from .rigging import CameraPose
from .scene import _LABEL_MASK, VoxelScene

DEFAULT_NEAR = 0.1
DEFAULT_FAR = 10.0


@dataclass(frozen=True)
class Intrinsics:
    width: int = 640
    height: int = 480
    fx: float = 525.0
    fy: float = 525.0
    cx: float | None = None
    cy: float | None = None

    @property
    def centre(self) -> tuple[float, float]:
        cx = self.width / 2.0 if self.cx is None else self.cx
        cy = self.height / 2.0 if self.cy is None else self.cy
        return cx, cy

    def scaled(self, factor: float) -> "Intrinsics":
        cx, cy = self.centre
        return Intrinsics(
            int(round(self.width * factor)),
            int(round(self.height * factor)),
            self.fx * factor,
            self.fy * factor,
            cx * factor,
            cy * factor,
        )


@dataclass
class RaycastResult:
    """Per-pixel first-hit voxel indices and depths for one rendered view."""

    hit_index: np.ndarray  # (H, W) int32, -1 at misses
    depth: np.ndarray  # (H, W) float64, inf at misses
    pose: CameraPose
    intrinsics: Intrinsics
    orthographic: bool
    ortho_scale: float | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.hit_index.shape

    def voxel_position(self, scene: VoxelScene, pixel) -> tuple[int, int, int] | None:
        """Voxel position under (row, col); None on a miss."""
        row, col = int(pixel[0]), int(pixel[1])
        h, w = self.hit_index.shape
        if not (0 <= row < h and 0 <= col < w):
            return None
        idx = int(self.hit_index[row, col])
        if idx < 0:
            return None
        return tuple(int(v) for v in scene.positions[idx])


def _pixel_grid(intr: Intrinsics) -> tuple[np.ndarray, np.ndarray]:
    cx, cy = intr.centre
    px = np.arange(intr.width, dtype=np.float64) + 0.5 - cx
    py = np.arange(intr.height, dtype=np.float64) + 0.5 - cy
    return np.meshgrid(px, py)


def raycast(
    scene: VoxelScene,
    pose: CameraPose,
    intrinsics: Intrinsics,
    *,
    near: float = DEFAULT_NEAR,
    far: float = DEFAULT_FAR,
    orthographic: bool = False,
    ortho_scale: float | None = None,
    backend=None,
) -> RaycastResult:
    """Render first-hit voxel indices and depths for a camera view.

    ``ortho_scale`` is the metres-per-pixel footprint of the orthographic
    projection (required when ``orthographic``); perspective views use the
    pinhole intrinsics.  Depth is the ray parameter at the cell boundary
    where the hit voxel was entered, clamped to [near, far].
    """
    impl = backend or kernels
    grid, origin = scene.grid()
    px, py = _pixel_grid(intrinsics)
    if orthographic:
        if ortho_scale is None:
            raise ValueError("orthographic raycast needs ortho_scale (metres/pixel)")
        offsets = (
            px[..., None] * ortho_scale * pose.v[None, None, :]
            - py[..., None] * ortho_scale * pose.u[None, None, :]
        )
        origins = pose.position[None, None, :] + offsets
        dirs = np.broadcast_to(pose.n, origins.shape).copy()
    else:
        dirs = (
            pose.n[None, None, :]
            + (px / intrinsics.fx)[..., None] * pose.v[None, None, :]
            - (py / intrinsics.fy)[..., None] * pose.u[None, None, :]
        )
        origins = np.broadcast_to(pose.position, dirs.shape).copy()
    shape = (intrinsics.height, intrinsics.width)
    hit, t = impl.raycast_rays(
        grid,
        np.asarray(origin, dtype=np.int64),
        scene.voxel_size,
        origins.reshape(-1, 3),
        dirs.reshape(-1, 3),
        float(near),
        float(far),
    )
    return RaycastResult(
        hit.reshape(shape),
        t.reshape(shape),
        pose.copy(),
        intrinsics,
        orthographic,
        ortho_scale,
    )


def label_colour_table(scene: VoxelScene) -> np.ndarray:
    """(32, 3) uint8 table mapping label id to display colour."""
    table = np.zeros((32, 3), dtype=np.uint8)
    for info in scene.label_table:
        table[info.id] = info.colour
    return table


def composite_frame(
    result: RaycastResult,
    scene: VoxelScene,
    *,
    alpha: float = 0.5,
    background=(16, 16, 16),
    median_filter: bool = False,
) -> np.ndarray:
    """Blend scene colours with label colours into an (H, W, 3) uint8 image.

    Labelled voxels show ``alpha`` parts label colour; unlabelled voxels
    show their own colour.  ``median_filter`` smooths the *displayed* label
    ids with a 3x3 median before blending; stored labels are untouched.
    """
    hit = result.hit_index
    mask = hit >= 0
    safe = np.where(mask, hit, 0)
    img = np.empty(hit.shape + (3,), dtype=np.float64)
    img[:] = np.asarray(background, dtype=np.float64)
    colours = scene.colours[safe].astype(np.float64)
    ids = np.where(mask, scene.labels[safe] & _LABEL_MASK, 0).astype(np.uint8)
    if median_filter:
        from scipy.ndimage import median_filter as _median

        ids = np.where(mask, _median(ids, size=3), 0).astype(np.uint8)
    label_rgb = label_colour_table(scene)[ids].astype(np.float64)
    labelled = mask & (ids > 0)
    out = np.where(
        labelled[..., None],
        (1.0 - alpha) * colours + alpha * label_rgb,
        colours,
    )
    img[mask] = out[mask]
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def semantic_frame(result: RaycastResult, scene: VoxelScene) -> np.ndarray:
    """Pure label-colour rendering (misses black)."""
    return composite_frame(result, scene, alpha=1.0, background=(0, 0, 0))


def save_png(image: np.ndarray, path) -> None:
    Image.fromarray(image).save(path, format="PNG")


def encode_png(image: np.ndarray) -> bytes:
    import io

    buf = io.BytesIO()
    Image.fromarray(image).save(buf, format="PNG")
    return buf.getvalue()


def save_depth_pgm(depth_m: np.ndarray, path) -> None:
    """Write depth in millimetres as a binary 16-bit PGM, little-endian.

    Invalid depths (negative or non-finite) store 0.  Sample values are
    little-endian by format decision here, which diverges from Netpbm's
    big-endian convention; ``load_depth_pgm`` is the matching reader.
    """
    h, w = depth_m.shape
    mm = np.where(
        np.isfinite(depth_m) & (depth_m >= 0),
        np.clip(np.rint(depth_m * 1000.0), 0, 65535),
        0,
    ).astype("<u2")
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n65535\n".encode("ascii"))
        fh.write(mm.tobytes())


def load_depth_pgm(path) -> np.ndarray:
    """Read a 16-bit little-endian PGM back to metres; 0 becomes -1."""
    with open(path, "rb") as fh:
        data = fh.read()
    parts = []
    off = 0
    while len(parts) < 4:
        while off < len(data) and data[off : off + 1].isspace():
            off += 1
        if data[off : off + 1] == b"#":
            while off < len(data) and data[off : off + 1] != b"\n":
                off += 1
            continue
        start = off
        while off < len(data) and not data[off : off + 1].isspace():
            off += 1
        parts.append(data[start:off])
    off += 1  # single whitespace after maxval
    if parts[0] != b"P5":
        raise ValueError("not a binary PGM")
    w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    if maxval != 65535:
        raise ValueError("expected 16-bit PGM")
    mm = np.frombuffer(data, dtype="<u2", count=w * h, offset=off).reshape(h, w)
    depth = mm.astype(np.float64) / 1000.0
    depth[mm == 0] = -1.0
    return depth
