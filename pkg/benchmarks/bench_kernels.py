"""Compiled core vs pure-numpy fallback on the five hot kernels.

Each workload runs through the public entry point that owns the kernel, on
a realistic scene, after asserting that both backends produce identical
output.  Reported times are the best of ``--repeats`` runs.

Usage: python benchmarks/bench_kernels.py [--repeats N] [--quick]
"""

import argparse
import time

import numpy as np

from paintbox import kernels
from paintbox.features import compute_descriptors
from paintbox.generators import generate
from paintbox.propagation import PropagationSettings, propagate_step
from paintbox.raycaster import Intrinsics, raycast
from paintbox.rigging import CameraPose
from paintbox.scene import LabelGroup, MarkMode, pack_label


def best_of(fn, repeats):
    times = []
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return min(times) * 1000.0


def synthetic_tree(rng, n_features, interior=2047):
    """A random flattened routing tree (perfect-ish, ~11 levels)."""
    feat = [-1]
    tau = [0.0]
    left = [-1]
    right = [-1]
    frontier = [0]
    while frontier and len(feat) < 2 * interior + 1:
        node = frontier.pop(0)
        feat[node] = int(rng.integers(n_features))
        tau[node] = float(rng.uniform(0.2, 0.8))
        for side in (left, right):
            side[node] = len(feat)
            feat.append(-1)
            tau.append(0.0)
            left.append(-1)
            right.append(-1)
            frontier.append(len(feat) - 1)
    to = lambda a, d: np.asarray(a, dtype=d)
    return to(feat, np.int32), to(tau, np.float64), to(left, np.int32), to(right, np.int32)


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=5)
    parser.add_argument("--quick", action="store_true", help="smaller workloads")
    args = parser.parse_args(argv)

    backends = [("python", kernels.get_backend("python"))]
    try:
        backends.append(("compiled", kernels.get_backend("compiled")))
    except ImportError:
        print("compiled core not built; benchmarking the fallback only")

    scale = 4 if args.quick else 1
    rng = np.random.default_rng(0)
    scene, truth = generate("room", seed=0)
    pose = CameraPose.look_at((2.0, 2.0, 4.2), (2.0, 2.0, 0.0), up=(0.0, 1.0, 0.0))
    intr = Intrinsics(320 // scale, 240 // scale, 240.0 / scale, 240.0 / scale)

    # seed a third of the floor so propagation has both adopters and vetoes
    floor = np.flatnonzero(truth.label_ids() == 1)[::3]
    scene.mark_voxels(scene.positions[floor], pack_label(1, LabelGroup.USER), MarkMode.NORMAL)
    view = raycast(scene, pose, intr)

    bits = rng.integers(0, 2, size=4_000_000 // scale).astype(np.uint8)
    feat, tau, left, right = synthetic_tree(rng, 16)
    descriptors = rng.uniform(size=(200_000 // scale, 16))
    patch_rows = rng.choice(len(scene.positions), size=2_000 // scale, replace=False)

    workloads = {
        "prefix scan (4M bits)": lambda impl: impl.exclusive_scan(bits),
        "raycast (room, 320x240)": lambda impl: raycast(scene, pose, intr, backend=impl).hit_index,
        "tree routing (200k x depth 11)": lambda impl: impl.route_descriptors(
            feat, tau, left, right, descriptors
        ),
        "patch descriptors (2k voxels)": lambda impl: compute_descriptors(
            scene, patch_rows, backend=impl
        )[0],
        "propagation ring scan (320x240)": lambda impl: impl.propagate_candidates(
            view.hit_index,
            scene.label_ids(),
            scene.world_centres(),
            scene.lab_colours().astype(np.float64),
            scene.normals.astype(np.float64),
            1,
            PropagationSettings().ring_radius,
            PropagationSettings().max_position_dist,
            PropagationSettings().max_colour_dist,
            float(np.cos(np.deg2rad(PropagationSettings().max_normal_angle_deg))),
            PropagationSettings().min_neighbours,
        ),
    }

    width = max(len(k) for k in workloads)
    header = f"{'kernel':<{width}}  " + "".join(f"{name:>12}" for name, _ in backends)
    if len(backends) == 2:
        header += f"{'speedup':>10}"
    print(header)
    print("-" * len(header))
    for label, run in workloads.items():
        outputs, cells = [], []
        for _, impl in backends:
            outputs.append(run(impl))
            cells.append(best_of(lambda: run(impl), args.repeats))
        if len(outputs) == 2:
            assert np.array_equal(outputs[0], outputs[1]), f"{label}: backends disagree"
        row = f"{label:<{width}}  " + "".join(f"{ms:>10.2f}ms" for ms in cells)
        if len(cells) == 2:
            row += f"{cells[0] / cells[1]:>9.1f}x"
        print(row)


if __name__ == "__main__":
    main()
