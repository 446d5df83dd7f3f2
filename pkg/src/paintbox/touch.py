"""Touch detection from a raw depth stream against the known scene.

Per frame: clean the raw depth (far/invalid readings become -1) and fill
scene raycast misses with a large constant; mark pixels whose depths
disagree by more than a threshold; denoise with a 3x3 morphological open;
connected components (8-connectivity) within an area band become touch
candidates; each candidate is scored by a small 2-class forest over a
histogram of its depth differences; the best accepted candidate yields
touch points where the difference sits inside a strict (tau, gamma) band.
Processing runs on a nearest-neighbour downscale of the inputs for speed.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
from scipy import ndimage

from .forest import ForestSettings, RandomForest


@dataclass(frozen=True)
class TouchSettings:
    max_depth: float = 2.0  # metres; raw readings beyond this are invalid
    far_fill: float = 100.0  # metres; scene raycast misses become this
    tau: float = 0.010  # change threshold, metres
    gamma: float = 0.025  # touch band upper edge, metres
    area_min: int = 150  # pixels, at processing resolution
    area_max_frac: float = 0.40
    hist_bins: int = 64
    hist_range: float = 0.5  # metres
    quantize: int = 2  # nearest-neighbour downscale factor
    accept_threshold: float = 0.5


@dataclass
class TouchCandidate:
    component_id: int
    area: int
    histogram: np.ndarray
    score: float = 0.0
    accepted: bool = False


@dataclass
class TouchResult:
    candidates: list[TouchCandidate]
    best: TouchCandidate | None
    points: np.ndarray  # (P, 2) full-resolution (row, col)
    change_mask: np.ndarray  # denoised, processing resolution
    components: np.ndarray  # labelled image, processing resolution
    elapsed_ms: float

    @property
    def touched(self) -> bool:
        return self.best is not None and len(self.points) > 0


def prepare_inputs(
    raw_depth: np.ndarray, scene_depth: np.ndarray, settings: TouchSettings = TouchSettings()
) -> tuple[np.ndarray, np.ndarray]:
    """Clean the two depth images: raw invalids become -1, misses far_fill."""
    raw = np.asarray(raw_depth, dtype=np.float64)
    d = np.where(np.isfinite(raw) & (raw >= 0) & (raw <= settings.max_depth), raw, -1.0)
    scene = np.asarray(scene_depth, dtype=np.float64)
    r = np.where(np.isfinite(scene), scene, settings.far_fill)
    return d, r


def change_mask(
    d: np.ndarray, r: np.ndarray, tau: float, *, denoise: bool = True
) -> np.ndarray:
    """Pixels with a valid reading that disagrees with the scene by > tau."""
    mask = (d >= 0.0) & (np.abs(d - r) > tau)
    if denoise:
        mask = ndimage.binary_opening(mask, structure=np.ones((3, 3), dtype=bool))
    return mask


def connected_components(mask: np.ndarray) -> tuple[np.ndarray, int]:
    """8-connected component labelling; returns (labels, count)."""
    labels, count = ndimage.label(mask, structure=np.ones((3, 3), dtype=int))
    return labels, int(count)


def candidate_histogram(
    d: np.ndarray, r: np.ndarray, component_mask: np.ndarray, settings: TouchSettings
) -> np.ndarray:
    """Unnormalised histogram of |d - r| over the component's pixels."""
    diff = np.abs(d[component_mask] - r[component_mask])
    hist, _ = np.histogram(diff, bins=settings.hist_bins, range=(0.0, settings.hist_range))
    return hist.astype(np.float64)


def default_classifier_settings(seed: int = 20240501) -> ForestSettings:
    return ForestSettings(
        num_trees=5,
        num_labels=2,
        feature_dim=TouchSettings().hist_bins,
        candidates=64,
        min_examples=20,
        split_budget=64,
        max_depth=12,
        reservoir_capacity=2048,
        seed=seed,
    )


class TouchPipeline:
    """Stateful per-frame touch detector bound to a trained classifier."""

    def __init__(self, classifier: RandomForest, settings: TouchSettings = TouchSettings()):
        if classifier.settings.num_labels != 2:
            raise ValueError("touch classifier must be 2-class")
        if classifier.settings.feature_dim != settings.hist_bins:
            raise ValueError("classifier feature length must match hist_bins")
        self.classifier = classifier
        self.settings = settings

    def process(self, raw_depth: np.ndarray, scene_depth: np.ndarray) -> TouchResult:
        start = time.perf_counter()
        s = self.settings
        q = max(1, int(s.quantize))
        d_full, r_full = prepare_inputs(raw_depth, scene_depth, s)
        d = d_full[::q, ::q]
        r = r_full[::q, ::q]
        mask = change_mask(d, r, s.tau)
        labels, count = connected_components(mask)
        area_max = int(s.area_max_frac * labels.size)
        candidates: list[TouchCandidate] = []
        if count:
            areas = np.bincount(labels.ravel(), minlength=count + 1)
            for comp in range(1, count + 1):
                area = int(areas[comp])
                if area < s.area_min or area > area_max:
                    continue
                hist = candidate_histogram(d, r, labels == comp, s)
                candidates.append(TouchCandidate(comp, area, hist))
        best: TouchCandidate | None = None
        if candidates:
            feats = np.stack([c.histogram for c in candidates])
            pmfs = self.classifier.predict_pmf(feats)
            for cand, pmf in zip(candidates, pmfs):
                cand.score = float(pmf[1])
                cand.accepted = cand.score > s.accept_threshold
                if cand.accepted and (best is None or cand.score > best.score):
                    best = cand
        points = np.empty((0, 2), dtype=np.int64)
        if best is not None:
            diff = np.abs(d - r)
            touch = (labels == best.component_id) & (d >= 0) & (diff > s.tau) & (diff < s.gamma)
            rows, cols = np.nonzero(touch)
            points = np.stack([rows * q, cols * q], axis=1).astype(np.int64)
        elapsed = (time.perf_counter() - start) * 1000.0
        return TouchResult(candidates, best, points, mask, labels, elapsed)


# -- synthetic sequences --------------------------------------------------


@dataclass
class TouchScript:
    """Scripted hand motion over a scene, read from JSON.

    ``keyframes`` maps frame numbers to hand-centre world positions; the
    centre is interpolated linearly in between.  ``radii_mm`` are the
    ellipsoid semi-axes.  ``contact_gap_mm`` is the ground-truth rule: the
    hand counts as touching when its lowest point comes within that gap of
    the surface beneath it.
    """

    frames: int
    keyframes: list[tuple[int, tuple[float, float, float]]]
    radii_mm: tuple[float, float, float] = (70.0, 55.0, 30.0)
    noise_sigma_mm: float = 5.0
    dropout: float = 0.002
    contact_gap_mm: float = 8.0
    seed: int = 0

    @classmethod
    def from_json(cls, text: str) -> "TouchScript":
        raw = json.loads(text)
        return cls(
            frames=int(raw["frames"]),
            keyframes=[(int(f), tuple(map(float, p))) for f, p in raw["keyframes"]],
            radii_mm=tuple(map(float, raw.get("radii_mm", (70.0, 55.0, 30.0)))),
            noise_sigma_mm=float(raw.get("noise_sigma_mm", 5.0)),
            dropout=float(raw.get("dropout", 0.002)),
            contact_gap_mm=float(raw.get("contact_gap_mm", 8.0)),
            seed=int(raw.get("seed", 0)),
        )

    def centre_at(self, frame: int) -> np.ndarray:
        ks = sorted(self.keyframes)
        if frame <= ks[0][0]:
            return np.asarray(ks[0][1], dtype=np.float64)
        for (f0, p0), (f1, p1) in zip(ks, ks[1:]):
            if f0 <= frame <= f1:
                w = 0.0 if f1 == f0 else (frame - f0) / (f1 - f0)
                return (1 - w) * np.asarray(p0, dtype=np.float64) + w * np.asarray(
                    p1, dtype=np.float64
                )
        return np.asarray(ks[-1][1], dtype=np.float64)


def hand_depth(
    centre: np.ndarray,
    radii_m: np.ndarray,
    camera_z: float,
    xs: np.ndarray,
    ys: np.ndarray,
) -> np.ndarray:
    """Orthographic top-down depth of an ellipsoid hand; inf outside it."""
    nx = (xs - centre[0]) / radii_m[0]
    ny = (ys - centre[1]) / radii_m[1]
    inside = nx * nx + ny * ny
    top = np.full(xs.shape, -np.inf)
    ok = inside < 1.0
    top[ok] = centre[2] + radii_m[2] * np.sqrt(1.0 - inside[ok])
    depth = camera_z - top
    depth[~ok] = np.inf
    return depth


@dataclass
class SyntheticFrame:
    raw_depth: np.ndarray
    scene_depth: np.ndarray
    contact: bool
    contact_pixels: np.ndarray  # (P, 2) noiseless ground-truth (row, col)


def synthesize_frames(scene, script: TouchScript, *, width=640, height=480):
    """Yield per-frame synthetic depth and ground truth for a scripted hand.

    The camera looks straight down from above the scene's bounding box,
    orthographic, sized to cover the full footprint.  The raw stream is
    min(scene, hand) plus Gaussian noise and dropout; ground truth comes
    from the noiseless images.
    """
    from .raycaster import Intrinsics, raycast
    from .rigging import CameraPose

    rng = np.random.default_rng(script.seed)
    centres = scene.world_centres()
    lo = centres.min(axis=0)
    hi = centres.max(axis=0)
    cam_z = hi[2] + 1.0
    mid = (lo + hi) / 2.0
    span = float(max(hi[0] - lo[0], hi[1] - lo[1]) + 0.2)
    scale = span / max(width, height)
    pose = CameraPose(
        np.array([mid[0], mid[1], cam_z]),
        np.array([0.0, 0.0, -1.0]),
        np.array([0.0, 1.0, 0.0]),
        np.array([1.0, 0.0, 0.0]),
    )
    intr = Intrinsics(width, height)
    rc = raycast(
        scene, pose, intr, orthographic=True, ortho_scale=scale, near=0.05, far=50.0
    )
    scene_depth = rc.depth.copy()

    cx, cy = intr.centre
    px, py = np.meshgrid(
        np.arange(width, dtype=np.float64) + 0.5 - cx,
        np.arange(height, dtype=np.float64) + 0.5 - cy,
    )
    xs = pose.position[0] + px * scale * pose.v[0] - py * scale * pose.u[0]
    ys = pose.position[1] + px * scale * pose.v[1] - py * scale * pose.u[1]
    radii = np.asarray(script.radii_mm, dtype=np.float64) / 1000.0

    for frame in range(script.frames):
        centre = script.centre_at(frame)
        hand = hand_depth(centre, radii, cam_z, xs, ys)
        clean = np.minimum(scene_depth, hand)
        # ground truth from noiseless geometry: gap between hand bottom and
        # the surface directly beneath its footprint
        foot = np.isfinite(hand)
        hand_bottom = np.full(hand.shape, np.inf)
        nx = (xs - centre[0]) / radii[0]
        ny = (ys - centre[1]) / radii[1]
        inside = nx * nx + ny * ny
        okf = inside < 1.0
        hand_bottom[okf] = centre[2] - radii[2] * np.sqrt(1.0 - inside[okf])
        surface_z = pose.position[2] - scene_depth
        gap = hand_bottom - surface_z
        contact_px = (
            foot
            & np.isfinite(scene_depth)
            & (gap <= script.contact_gap_mm / 1000.0)
            & (hand < scene_depth)
        )
        rows, cols = np.nonzero(contact_px)
        raw = clean.copy()
        valid = np.isfinite(raw)
        raw[valid] += rng.normal(0.0, script.noise_sigma_mm / 1000.0, size=int(valid.sum()))
        drop = rng.random(raw.shape) < script.dropout
        raw[drop] = -1.0
        raw[~np.isfinite(raw)] = -1.0
        yield SyntheticFrame(
            raw_depth=raw,
            scene_depth=scene_depth,
            contact=bool(rows.size),
            contact_pixels=np.stack([rows, cols], axis=1) if rows.size else np.empty((0, 2), dtype=np.int64),
        ), pose, intr, scale


def save_sequence(scene, script: TouchScript, out_dir, *, width=640, height=480) -> dict:
    """Write a recorded sequence: numbered depth PGMs, poses, intrinsics.

    Layout: frame_NNNN.pgm (16-bit little-endian millimetres),
    frame_NNNN.pose.txt (4x4 camera-to-world, row-major), intrinsics.txt,
    and sequence.json with the per-frame ground truth.
    """
    from .raycaster import save_depth_pgm

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    gt = []
    meta = None
    for i, (frame, pose, intr, scale) in enumerate(
        synthesize_frames(scene, script, width=width, height=height)
    ):
        save_depth_pgm(frame.raw_depth, out / f"frame_{i:04d}.pgm")
        with open(out / f"frame_{i:04d}.pose.txt", "w") as fh:
            for row in pose.matrix():
                fh.write(" ".join(f"{v:.9g}" for v in row) + "\n")
        centroid = (
            frame.contact_pixels.mean(axis=0).tolist() if frame.contact else None
        )
        gt.append({"frame": i, "contact": frame.contact, "centroid": centroid})
        if meta is None:
            meta = {"width": width, "height": height, "ortho_scale": scale}
    with open(out / "intrinsics.txt", "w") as fh:
        fh.write(f"width {meta['width']}\n")
        fh.write(f"height {meta['height']}\n")
        fh.write(f"projection orthographic\n")
        fh.write(f"ortho_scale {meta['ortho_scale']:.9g}\n")
    doc = {"frames": len(gt), "ground_truth": gt}
    (out / "sequence.json").write_text(json.dumps(doc, indent=2))
    return doc


def load_sequence(seq_dir):
    """Iterate (raw_depth, pose_matrix) over a recorded sequence directory."""
    from .raycaster import load_depth_pgm

    seq = Path(seq_dir)
    meta = {}
    for line in (seq / "intrinsics.txt").read_text().splitlines():
        key, value = line.split(None, 1)
        meta[key] = value
    frames = sorted(seq.glob("frame_*.pgm"))
    for pgm in frames:
        pose_path = seq / (pgm.stem + ".pose.txt")
        matrix = np.loadtxt(pose_path).reshape(4, 4)
        yield load_depth_pgm(pgm), matrix, meta


def build_training_corpus(scene, scripts, *, width=640, height=480):
    """Histogram features and touch labels from synthetic scripted frames.

    Positives come from frames whose ground truth says contact; every
    area-passing candidate in such frames whose pixels overlap the true
    contact region is a positive, everything else a negative.
    """
    settings = TouchSettings()
    xs, ys = [], []
    for frame, _pose, _intr, _scale in (
        f for script in scripts for f in synthesize_frames(scene, script, width=width, height=height)
    ):
        q = settings.quantize
        d_full, r_full = prepare_inputs(frame.raw_depth, frame.scene_depth, settings)
        d = d_full[::q, ::q]
        r = r_full[::q, ::q]
        mask = change_mask(d, r, settings.tau)
        labels, count = connected_components(mask)
        if not count:
            continue
        contact = np.zeros(d.shape, dtype=bool)
        if frame.contact:
            rows = frame.contact_pixels[:, 0] // q
            cols = frame.contact_pixels[:, 1] // q
            ok = (rows < d.shape[0]) & (cols < d.shape[1])
            contact[rows[ok], cols[ok]] = True
        areas = np.bincount(labels.ravel(), minlength=count + 1)
        area_max = int(settings.area_max_frac * labels.size)
        for comp in range(1, count + 1):
            if areas[comp] < settings.area_min or areas[comp] > area_max:
                continue
            comp_mask = labels == comp
            hist = candidate_histogram(d, r, comp_mask, settings)
            label = int(frame.contact and (comp_mask & contact).any())
            xs.append(hist)
            ys.append(label)
    if not xs:
        return np.empty((0, settings.hist_bins)), np.empty(0, dtype=np.int64)
    return np.stack(xs), np.asarray(ys, dtype=np.int64)


def train_touch_classifier(scene, scripts, *, seed: int = 20240501) -> RandomForest:
    """Train the 2-class candidate classifier on a synthetic corpus."""
    x, y = build_training_corpus(scene, scripts)
    forest = RandomForest(default_classifier_settings(seed))
    order = np.random.default_rng(seed).permutation(len(x))
    chunk = 256
    for s in range(0, len(order), chunk):
        rows = order[s : s + chunk]
        forest.add_examples(x[rows], y[rows])
        while forest.split_step():
            pass
    return forest


def load_touch_classifier(path=None) -> RandomForest:
    """Load a classifier checkpoint; the packaged default when no path given."""
    if path is not None:
        return RandomForest.load_checkpoint(Path(path).read_bytes())
    blob = resources.files("paintbox").joinpath("data/touch_forest.bin").read_bytes()
    return RandomForest.load_checkpoint(blob)


def default_scripts(scene) -> list[TouchScript]:
    """A mixed bag of touching and hovering passes over the scene."""
    centres = scene.world_centres()
    lo = centres.min(axis=0)
    hi = centres.max(axis=0)
    mid = (lo + hi) / 2.0
    z_surface = float(hi[2])
    scripts = []
    for k, (dz_touch, dz_hover) in enumerate([(0.0, 0.15), (0.002, 0.08), (-0.004, 0.25)]):
        # descend, touch, lift
        z0 = z_surface + 0.028 + dz_hover
        z1 = z_surface + 0.028 + dz_touch  # hand bottom ~ centre - radius_z
        x0, y0 = float(lo[0] + 0.3), float(mid[1])
        x1, y1 = float(hi[0] - 0.3), float(mid[1] - 0.2)
        scripts.append(
            TouchScript(
                frames=24,
                keyframes=[
                    (0, (x0, y0, z0)),
                    (8, (x0 + (x1 - x0) * 0.3, y0, z1)),
                    (15, (x1, y1, z1)),
                    (23, (x1, y1, z0)),
                ],
                seed=100 + k,
            )
        )
        # pure hover pass
        scripts.append(
            TouchScript(
                frames=12,
                keyframes=[(0, (x0, y1, z0)), (11, (x1, y0, z0))],
                seed=200 + k,
            )
        )
    return scripts
