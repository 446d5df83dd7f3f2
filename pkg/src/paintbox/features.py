"""Appearance descriptors for voxels: oriented colour patches plus normal.

A descriptor samples a square CIELab patch on the voxel's tangent plane,
rotated so the dominant intensity-gradient direction of a first, unrotated
patch maps to the patch's x axis, then appends the world-space normal.
With the default 13x13 patch this gives 13*13*3 + 3 = 510 dimensions.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from . import kernels
from .scene import VoxelScene

PATCH_SIZE = 13
PATCH_SPACING_VOXELS = 2.0
ORIENTATION_BINS = 36

_SRGB_TO_XYZ = np.array(
    [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ]
)
_XYZ_TO_SRGB = np.linalg.inv(_SRGB_TO_XYZ)
_D65 = np.array([0.95047, 1.0, 1.08883])
_DELTA = 6.0 / 29.0


def descriptor_length(patch_size: int = PATCH_SIZE) -> int:
    return patch_size * patch_size * 3 + 3


def rgb_to_cielab(rgb) -> np.ndarray:
    """Convert 8-bit sRGB (..., 3) to CIELab (D65), float64."""
    rgb = np.asarray(rgb, dtype=np.float64) / 255.0
    linear = np.where(
        rgb <= 0.04045, rgb / 12.92, ((rgb + 0.055) / 1.055) ** 2.4
    )
    xyz = linear @ _SRGB_TO_XYZ.T
    t = xyz / _D65
    f = np.where(t > _DELTA**3, np.cbrt(t), t / (3.0 * _DELTA**2) + 4.0 / 29.0)
    lab = np.empty_like(xyz)
    lab[..., 0] = 116.0 * f[..., 1] - 16.0
    lab[..., 1] = 500.0 * (f[..., 0] - f[..., 1])
    lab[..., 2] = 200.0 * (f[..., 1] - f[..., 2])
    return lab


def cielab_to_rgb(lab) -> np.ndarray:
    """Inverse of rgb_to_cielab, returning 8-bit sRGB (clipped)."""
    lab = np.asarray(lab, dtype=np.float64)
    fy = (lab[..., 0] + 16.0) / 116.0
    fx = fy + lab[..., 1] / 500.0
    fz = fy - lab[..., 2] / 200.0
    f = np.stack([fx, fy, fz], axis=-1)
    t = np.where(f > _DELTA, f**3, 3.0 * _DELTA**2 * (f - 4.0 / 29.0))
    xyz = t * _D65
    linear = xyz @ _XYZ_TO_SRGB.T
    srgb = np.where(
        linear <= 0.0031308,
        linear * 12.92,
        1.055 * np.clip(linear, 0.0, None) ** (1.0 / 2.4) - 0.055,
    )
    return np.clip(np.rint(srgb * 255.0), 0, 255).astype(np.uint8)


class DegenerateNormalError(ValueError):
    """Too little local surface to estimate a normal."""


def estimate_normal(scene: VoxelScene, position, camera_position=None) -> np.ndarray:
    """Unit surface normal at a voxel position.

    The stored normal wins when the voxel has one; otherwise a plane is
    fitted to the occupied voxels within two grid units and its normal is
    returned, with the sign facing ``camera_position`` when given (the
    z-most component made positive when not).
    """
    idx = scene.index_of(position)
    if idx >= 0:
        stored = scene.normals[idx].astype(np.float64)
        if np.linalg.norm(stored) > 1e-6:
            return stored / np.linalg.norm(stored)
    pos = np.asarray(position, dtype=np.int64)
    offsets = np.stack(
        np.meshgrid(*([np.arange(-2, 3)] * 3), indexing="ij"), axis=-1
    ).reshape(-1, 3)
    offsets = offsets[(offsets**2).sum(axis=1) <= 4]
    neighbours = [
        scene.index_of(pos + off) for off in offsets if scene.index_of(pos + off) >= 0
    ]
    if len(neighbours) < 3:
        raise DegenerateNormalError(
            f"only {len(neighbours)} occupied voxels within radius 2 of {tuple(pos)}"
        )
    pts = scene.world_centres()[neighbours]
    centred = pts - pts.mean(axis=0)
    _, sv, vt = np.linalg.svd(centred, full_matrices=False)
    if sv[1] < 1e-12:
        raise DegenerateNormalError(f"neighbourhood of {tuple(pos)} is collinear")
    normal = vt[2]
    if camera_position is not None:
        toward = np.asarray(camera_position, dtype=np.float64) - pts.mean(axis=0)
        if normal @ toward < 0:
            normal = -normal
    elif normal[2] < 0 or (normal[2] == 0 and normal[np.abs(normal).argmax()] < 0):
        normal = -normal
    return normal / np.linalg.norm(normal)


def tangent_basis(normals) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic in-plane axes (e1, e2) for unit normals (..., 3).

    e1 is the world axis least aligned with the normal, projected into the
    tangent plane and normalized; e2 = n x e1 completes a right-handed
    frame (e1, e2, n).
    """
    n = np.asarray(normals, dtype=np.float64)
    single = n.ndim == 1
    n = np.atleast_2d(n)
    axis = np.argmin(np.abs(n), axis=1)
    seed = np.zeros_like(n)
    seed[np.arange(len(n)), axis] = 1.0
    e1 = seed - (seed * n).sum(axis=1, keepdims=True) * n
    norm = np.linalg.norm(e1, axis=1, keepdims=True)
    norm[norm == 0.0] = 1.0
    e1 = e1 / norm
    e2 = np.cross(n, e1)
    if single:
        return e1[0], e2[0]
    return e1, e2


def dominant_orientation(intensity: np.ndarray) -> float:
    """Dominant gradient direction of a square intensity patch, radians.

    Central-difference gradients over the interior are binned into 36
    directions weighted by magnitude; the centre angle of the heaviest bin
    is returned (ties to the smallest angle).  A constant patch returns 0.
    """
    hist = orientation_histogram(intensity)
    total = hist.sum()
    if total == 0.0:
        return 0.0
    b = int(np.argmax(hist))
    return (b + 0.5) * (2.0 * np.pi / ORIENTATION_BINS)


def orientation_histogram(intensity: np.ndarray) -> np.ndarray:
    intensity = np.asarray(intensity, dtype=np.float64)
    gx = (intensity[1:-1, 2:] - intensity[1:-1, :-2]) * 0.5
    gy = (intensity[2:, 1:-1] - intensity[:-2, 1:-1]) * 0.5
    mag = np.hypot(gx, gy)
    ang = np.arctan2(gy, gx) % (2.0 * np.pi)
    bins = np.floor(ang / (2.0 * np.pi / ORIENTATION_BINS)).astype(np.int64)
    np.clip(bins, 0, ORIENTATION_BINS - 1, out=bins)
    hist = np.zeros(ORIENTATION_BINS)
    np.add.at(hist, bins.ravel(), mag.ravel())
    return hist


def _batched_orientations(patches_l: np.ndarray) -> np.ndarray:
    """Dominant orientation per patch for an (M, n, n) stack of L channels."""
    p = patches_l.astype(np.float64)
    gx = (p[:, 1:-1, 2:] - p[:, 1:-1, :-2]) * 0.5
    gy = (p[:, 2:, 1:-1] - p[:, :-2, 1:-1]) * 0.5
    mag = np.hypot(gx, gy).reshape(len(p), -1)
    ang = np.arctan2(gy, gx).reshape(len(p), -1) % (2.0 * np.pi)
    bins = np.floor(ang / (2.0 * np.pi / ORIENTATION_BINS)).astype(np.int64)
    np.clip(bins, 0, ORIENTATION_BINS - 1, out=bins)
    hist = np.zeros((len(p), ORIENTATION_BINS))
    rows = np.repeat(np.arange(len(p)), bins.shape[1])
    np.add.at(hist, (rows, bins.ravel()), mag.ravel())
    theta = (np.argmax(hist, axis=1) + 0.5) * (2.0 * np.pi / ORIENTATION_BINS)
    theta[hist.sum(axis=1) == 0.0] = 0.0
    return theta


def compute_descriptors(
    scene: VoxelScene,
    indices,
    *,
    patch_size: int = PATCH_SIZE,
    spacing_voxels: float = PATCH_SPACING_VOXELS,
    backend=None,
) -> tuple[np.ndarray, np.ndarray]:
    """Descriptors for voxels given by array index.

    Returns ``(descriptors, valid)``: (M, patch_size^2*3 + 3) float64 and a
    mask flagging voxels whose normal was degenerate (their rows are zero).
    """
    impl = backend or kernels
    indices = np.asarray(indices, dtype=np.int64)
    m = len(indices)
    dlen = descriptor_length(patch_size)
    out = np.zeros((m, dlen), dtype=np.float64)
    valid = np.ones(m, dtype=bool)
    if m == 0:
        return out, valid

    grid, origin = scene.grid()
    lab = scene.lab_colours()
    normals = scene.normals[indices].astype(np.float64)
    norm = np.linalg.norm(normals, axis=1)
    valid = norm > 1e-6
    unit = normals.copy()
    unit[valid] /= norm[valid, None]
    e1, e2 = tangent_basis(unit)
    centres = scene.world_centres()[indices]
    spacing = spacing_voxels * scene.voxel_size
    fill = lab[indices].astype(np.float32)

    first = impl.extract_patches(
        grid, origin, scene.voxel_size, lab, centres, e1, e2, patch_size, spacing, fill
    )
    theta = _batched_orientations(first[..., 0])
    c, s = np.cos(theta)[:, None], np.sin(theta)[:, None]
    r1 = c * e1 + s * e2
    r2 = -s * e1 + c * e2
    second = impl.extract_patches(
        grid, origin, scene.voxel_size, lab, centres, r1, r2, patch_size, spacing, fill
    )
    out[:, : dlen - 3] = second.reshape(m, -1)
    out[:, dlen - 3 :] = unit
    out[~valid] = 0.0
    return out, valid


def extract_patch(
    scene: VoxelScene,
    position,
    *,
    patch_size: int = PATCH_SIZE,
    spacing_voxels: float = PATCH_SPACING_VOXELS,
    oriented: bool = False,
) -> np.ndarray:
    """RGB patch on a voxel's tangent plane as (n, n, 3) uint8.

    With ``oriented`` the frame is first aligned to the dominant gradient
    direction, as in the descriptor pipeline.
    """
    idx = scene.index_of(position)
    if idx < 0:
        raise KeyError(f"no voxel at {tuple(position)}")
    grid, origin = scene.grid()
    normal = scene.normals[idx].astype(np.float64)
    norm = np.linalg.norm(normal)
    if norm <= 1e-6:
        raise ValueError(f"voxel at {tuple(position)} has a degenerate normal")
    normal /= norm
    e1, e2 = tangent_basis(normal)
    centre = scene.world_centres()[idx : idx + 1]
    spacing = spacing_voxels * scene.voxel_size
    rgbf = scene.colours.astype(np.float32)
    fill = rgbf[idx : idx + 1]
    if oriented:
        lab = scene.lab_colours()
        labfill = lab[idx : idx + 1].astype(np.float32)
        first = kernels.extract_patches(
            grid, origin, scene.voxel_size, lab, centre,
            e1[None], e2[None], patch_size, spacing, labfill,
        )
        theta = float(_batched_orientations(first[..., 0])[0])
        c, s = np.cos(theta), np.sin(theta)
        e1, e2 = c * e1 + s * e2, -s * e1 + c * e2
    patch = kernels.extract_patches(
        grid, origin, scene.voxel_size, rgbf, centre,
        e1[None], e2[None], patch_size, spacing, fill,
    )[0]
    return np.clip(np.rint(patch), 0, 255).astype(np.uint8)


def dump_feature_inspection(scene: VoxelScene, position, out_dir) -> dict:
    """Write patches, descriptor CSV and metadata for one voxel.

    Produces patch_raw.png, patch_oriented.png (16x nearest-neighbour
    upscales), descriptor.csv and inspection.json in ``out_dir``; returns
    the metadata dict.
    """
    from PIL import Image

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    idx = scene.index_of(position)
    if idx < 0:
        raise KeyError(f"no voxel at {tuple(position)}")
    raw = extract_patch(scene, position)
    oriented = extract_patch(scene, position, oriented=True)
    for name, patch in (("patch_raw.png", raw), ("patch_oriented.png", oriented)):
        img = Image.fromarray(patch).resize(
            (patch.shape[1] * 16, patch.shape[0] * 16), Image.NEAREST
        )
        img.save(out / name)
    desc, valid = compute_descriptors(scene, [idx])
    np.savetxt(out / "descriptor.csv", desc[0], delimiter=",", fmt="%.9g")
    lab = scene.lab_colours()
    first = kernels.extract_patches(
        *scene.grid(),
        scene.voxel_size,
        lab,
        scene.world_centres()[idx : idx + 1],
        *(a[None] for a in tangent_basis(scene.normals[idx] / np.linalg.norm(scene.normals[idx]))),
        PATCH_SIZE,
        PATCH_SPACING_VOXELS * scene.voxel_size,
        lab[idx : idx + 1].astype(np.float32),
    )
    meta = {
        "position": [int(v) for v in position],
        "voxel_index": int(idx),
        "valid": bool(valid[0]),
        "orientation_rad": float(_batched_orientations(first[..., 0])[0]),
        "normal": [float(v) for v in scene.normals[idx]],
        "descriptor_length": int(desc.shape[1]),
    }
    (out / "inspection.json").write_text(json.dumps(meta, indent=2))
    return meta
