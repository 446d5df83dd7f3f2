"""Streaming random forest with per-leaf example reservoirs.

Trees grow online: examples stream into leaf reservoirs, a per-tree
priority queue orders leaves by splittability (entropy, gated on a minimum
example count), and each ``split_step`` call converts at most a fixed
budget of leaves per tree into stumps chosen from random axis-aligned
candidates by information gain.  All randomness flows from per-tree
generators seeded off one master seed, so training is reproducible and
checkpoints resume bit-identically.
"""

from __future__ import annotations

import heapq
import json
import struct
from dataclasses import asdict, dataclass

import numpy as np

from . import kernels


class ContractViolation(ValueError):
    pass


@dataclass(frozen=True)
class ForestSettings:
    num_trees: int = 5
    num_labels: int = 32
    feature_dim: int = 510
    candidates: int = 128
    min_examples: int = 50
    split_budget: int = 8
    max_depth: int = 18
    reservoir_capacity: int = 1024
    reweight: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.num_trees < 1:
            raise ValueError("need at least one tree")
        if self.num_labels < 2:
            raise ValueError("need at least two labels")
        if self.reservoir_capacity < 1 or self.candidates < 1:
            raise ValueError("capacity and candidate count must be positive")
        if self.min_examples < 2:
            raise ValueError("min_examples below 2 can never produce a useful split")


def entropy_bits(counts, weights=None) -> float:
    """Shannon entropy (bits) of a class-count vector, optionally weighted.

    With weights, class mass is ``counts * weights`` (inverse-frequency
    weighting makes rare classes count as much as common ones).
    """
    counts = np.asarray(counts, dtype=np.float64)
    if (counts < 0).any():
        raise ContractViolation("negative class count")
    mass = counts if weights is None else counts * np.asarray(weights, dtype=np.float64)
    total = mass.sum()
    if total <= 0.0:
        return 0.0
    p = mass[mass > 0.0] / total
    return float(-(p * np.log2(p)).sum())


def information_gain(parent, left, right, weights=None) -> float:
    """Entropy reduction of splitting ``parent`` into ``left`` and ``right``.

    The three arguments are class-count vectors; left and right must
    partition the parent exactly.  Branch terms are weighted by their share
    of the (optionally weighted) parent mass.
    """
    parent = np.asarray(parent, dtype=np.float64)
    left = np.asarray(left, dtype=np.float64)
    right = np.asarray(right, dtype=np.float64)
    if not np.array_equal(left + right, parent):
        raise ContractViolation("left and right do not partition the parent multiset")
    mass = parent if weights is None else parent * np.asarray(weights, dtype=np.float64)
    total = mass.sum()
    if total <= 0.0:
        return 0.0
    lmass = left.sum() if weights is None else (left * weights).sum()
    rmass = right.sum() if weights is None else (right * weights).sum()
    return (
        entropy_bits(parent, weights)
        - (lmass / total) * entropy_bits(left, weights)
        - (rmass / total) * entropy_bits(right, weights)
    )


def _row_entropy(mass: np.ndarray) -> np.ndarray:
    """Shannon entropy (bits) of each row of a nonnegative mass matrix."""
    totals = mass.sum(axis=1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        p = mass / totals
        terms = p * np.log2(p)
    h = -np.where(mass > 0.0, terms, 0.0).sum(axis=1)
    return np.where(totals[:, 0] > 0.0, h, 0.0)


def _candidate_gains(parent, left_counts, weights=None) -> np.ndarray:
    """``information_gain`` for a whole batch of stump candidates.

    ``parent`` is a leaf's class-count vector and ``left_counts`` has one
    candidate per row; each right branch is the complement, so the partition
    check the public function performs holds by construction here.
    """
    parent = np.asarray(parent, dtype=np.float64)
    left = left_counts.astype(np.float64)
    right = parent[None, :] - left
    if weights is not None:
        w = np.asarray(weights, dtype=np.float64)
        pmass, lmass, rmass = parent * w, left * w[None, :], right * w[None, :]
    else:
        pmass, lmass, rmass = parent, left, right
    total = pmass.sum()
    if total <= 0.0:
        return np.zeros(len(left))
    h_parent = entropy_bits(parent, weights)
    lshare = lmass.sum(axis=1) / total
    rshare = rmass.sum(axis=1) / total
    return h_parent - lshare * _row_entropy(lmass) - rshare * _row_entropy(rmass)


def apply_class_weights(histogram, weights) -> np.ndarray:
    """Normalize a class histogram into a pmf after per-class weighting."""
    histogram = np.asarray(histogram, dtype=np.float64)
    mass = histogram * np.asarray(weights, dtype=np.float64)
    total = mass.sum()
    if total <= 0.0:
        return np.full(len(histogram), 1.0 / len(histogram))
    return mass / total


class ExampleReservoir:
    """Fixed-capacity uniform sample of the example stream, per class.

    Classic reservoir sampling: the first ``capacity`` examples of a class
    are kept; the t-th (t > capacity) replaces a uniformly random slot with
    probability capacity / t.
    """

    def __init__(self, capacity: int, num_labels: int):
        self.capacity = int(capacity)
        self.num_labels = int(num_labels)
        self.buckets: list[list[np.ndarray]] = [[] for _ in range(num_labels)]
        self.seen = np.zeros(num_labels, dtype=np.int64)

    def add(self, descriptor: np.ndarray, label: int, rng: np.random.Generator) -> bool:
        """Offer one example; returns True when it was stored."""
        bucket = self.buckets[label]
        self.seen[label] += 1
        if len(bucket) < self.capacity:
            bucket.append(descriptor)
            return True
        slot = int(rng.integers(0, self.seen[label]))
        if slot < self.capacity:
            bucket[slot] = descriptor
            return True
        return False

    def counts(self) -> np.ndarray:
        return np.array([len(b) for b in self.buckets], dtype=np.int64)

    def total(self) -> int:
        return sum(len(b) for b in self.buckets)

    def examples(self) -> tuple[np.ndarray, np.ndarray]:
        """All stored examples as (X, y), classes in ascending order."""
        xs, ys = [], []
        for label, bucket in enumerate(self.buckets):
            xs.extend(bucket)
            ys.extend([label] * len(bucket))
        if not xs:
            return np.empty((0, 0)), np.empty(0, dtype=np.int64)
        return np.stack(xs), np.asarray(ys, dtype=np.int64)


class Leaf:
    __slots__ = ("node_id", "depth", "reservoir", "version", "no_viable")

    def __init__(self, node_id: int, depth: int, reservoir: ExampleReservoir):
        self.node_id = node_id
        self.depth = depth
        self.reservoir = reservoir
        self.version = 0
        self.no_viable = False


class DecisionTree:
    """One streaming tree: flat node arrays plus leaf payloads."""

    def __init__(self, settings: ForestSettings, rng: np.random.Generator):
        self.settings = settings
        self.rng = rng
        self.feat: list[int] = [-1]
        self.tau: list[float] = [0.0]
        self.left: list[int] = [-1]
        self.right: list[int] = [-1]
        self.leaves: dict[int, Leaf] = {
            0: Leaf(0, 0, ExampleReservoir(settings.reservoir_capacity, settings.num_labels))
        }
        self.heap: list[tuple[float, int, int]] = []  # (-splittability, node_id, version)
        self.splits_done = 0
        self._flat = None

    def _flatten(self):
        if self._flat is None:
            self._flat = (
                np.asarray(self.feat, dtype=np.int32),
                np.asarray(self.tau, dtype=np.float64),
                np.asarray(self.left, dtype=np.int32),
                np.asarray(self.right, dtype=np.int32),
            )
        return self._flat

    def route(self, descriptors: np.ndarray, backend=None) -> np.ndarray:
        """Leaf node id for each descriptor row."""
        impl = backend or kernels
        feat, tau, left, right = self._flatten()
        return impl.route_descriptors(feat, tau, left, right, descriptors)

    def find_leaf(self, descriptor: np.ndarray) -> Leaf:
        node = int(self.route(np.asarray(descriptor, dtype=np.float64)[None, :])[0])
        return self.leaves[node]

    def splittability(self, leaf: Leaf) -> float:
        """Entropy of the leaf's stored examples, or 0 when unsplittable.

        Always the plain class-count entropy: class weights bias which
        candidate a split adopts, not which leaves are worth splitting.
        """
        if leaf.no_viable or leaf.depth >= self.settings.max_depth:
            return 0.0
        counts = leaf.reservoir.counts()
        if counts.sum() < self.settings.min_examples:
            return 0.0
        return entropy_bits(counts)

    def _push(self, leaf: Leaf) -> None:
        s = self.splittability(leaf)
        if s > 0.0:
            heapq.heappush(self.heap, (-s, leaf.node_id, leaf.version))

    def add_examples(self, descriptors: np.ndarray, labels: np.ndarray) -> None:
        """Stream a batch of (descriptor, label) examples into the leaves."""
        descriptors = np.asarray(descriptors, dtype=np.float64)
        labels = np.asarray(labels, dtype=np.int64)
        if descriptors.ndim != 2 or descriptors.shape[1] != self.settings.feature_dim:
            raise ContractViolation(
                f"descriptors must be (n, {self.settings.feature_dim})"
            )
        if (labels < 0).any() or (labels >= self.settings.num_labels).any():
            raise ContractViolation("label out of range")
        if len(descriptors) == 0:
            return
        leaf_ids = self.route(descriptors)
        for node in np.unique(leaf_ids):
            leaf = self.leaves[int(node)]
            rows = np.flatnonzero(leaf_ids == node)
            for r in rows:
                leaf.reservoir.add(descriptors[r], int(labels[r]), self.rng)
            leaf.version += 1
            leaf.no_viable = False
            self._push(leaf)

    def split_step(self, weights=None, budget: int | None = None) -> int:
        """Split up to ``budget`` leaves in priority order; returns splits done."""
        budget = self.settings.split_budget if budget is None else budget
        done = 0
        while done < budget and self.heap:
            _, node_id, version = heapq.heappop(self.heap)
            leaf = self.leaves.get(node_id)
            if leaf is None or leaf.version != version:
                continue  # stale entry
            if self.splittability(leaf) <= 0.0:
                continue
            if self._try_split(leaf, weights):
                done += 1
            else:
                leaf.no_viable = True
        return done

    def _try_split(self, leaf: Leaf, weights=None) -> bool:
        """Evaluate random stump candidates; adopt the best viable one."""
        x, y = leaf.reservoir.examples()
        counts = leaf.reservoir.counts()
        lo = x.min(axis=0)
        hi = x.max(axis=0)
        num_labels = self.settings.num_labels
        num_candidates = self.settings.candidates

        ks = self.rng.integers(0, self.settings.feature_dim, size=num_candidates)
        taus = self.rng.uniform(lo[ks], hi[ks])

        # examples() concatenates the per-class buckets in class order, so
        # class c occupies one contiguous slice; sorting each slice once
        # turns every candidate's per-class left-count into a searchsorted
        starts = np.concatenate([[0], np.cumsum(counts)])
        left_counts = np.zeros((num_candidates, num_labels), dtype=np.int64)
        for k in np.unique(ks):
            rows = np.flatnonzero(ks == k)
            col = x[:, k]
            for c in range(num_labels):
                seg = col[starts[c] : starts[c + 1]]
                if seg.size:
                    left_counts[rows, c] = np.searchsorted(np.sort(seg), taus[rows])
        n_left = left_counts.sum(axis=1)
        viable = (n_left > 0) & (n_left < len(x))
        if not viable.any():
            return False

        gains = _candidate_gains(counts, left_counts, weights)
        # argmax returns the first of equal maxima: ties in gain go to the
        # earliest-generated candidate
        best = int(np.argmax(np.where(viable, gains, -np.inf)))
        k = int(ks[best])
        tau = float(taus[best])
        left_mask = x[:, k] < tau

        left_id = len(self.feat)
        right_id = left_id + 1
        for node_id, mask in ((left_id, left_mask), (right_id, ~left_mask)):
            child = Leaf(
                node_id,
                leaf.depth + 1,
                ExampleReservoir(self.settings.reservoir_capacity, self.settings.num_labels),
            )
            sel = np.flatnonzero(mask)
            ysel = y[sel]
            for label in np.unique(ysel):
                rows = sel[ysel == label]
                child.reservoir.buckets[int(label)] = list(x[rows])
                child.reservoir.seen[int(label)] = rows.size
            self.leaves[node_id] = child
            self.feat.append(-1)
            self.tau.append(0.0)
            self.left.append(-1)
            self.right.append(-1)

        self.feat[leaf.node_id] = k
        self.tau[leaf.node_id] = tau
        self.left[leaf.node_id] = left_id
        self.right[leaf.node_id] = right_id
        del self.leaves[leaf.node_id]
        self._flat = None
        self.splits_done += 1
        self._push(self.leaves[left_id])
        self._push(self.leaves[right_id])
        return True

    def leaf_histograms(self) -> np.ndarray:
        """(n_nodes, num_labels) stored-count matrix; non-leaf rows zero."""
        out = np.zeros((len(self.feat), self.settings.num_labels), dtype=np.float64)
        for node_id, leaf in self.leaves.items():
            out[node_id] = leaf.reservoir.counts()
        return out

    def max_depth_reached(self) -> int:
        return max((leaf.depth for leaf in self.leaves.values()), default=0)


class RandomForest:
    """A bag of streaming trees averaged uniformly at prediction time."""

    def __init__(self, settings: ForestSettings):
        self.settings = settings
        seq = np.random.SeedSequence(settings.seed)
        self.trees = [
            DecisionTree(settings, np.random.Generator(np.random.PCG64(child)))
            for child in seq.spawn(settings.num_trees)
        ]
        self.class_counts = np.zeros(settings.num_labels, dtype=np.int64)

    def class_weights(self) -> np.ndarray | None:
        """Inverse-frequency weights over classes seen so far (None when off)."""
        if not self.settings.reweight:
            return None
        counts = self.class_counts.astype(np.float64)
        return np.where(counts > 0, 1.0 / np.maximum(counts, 1.0), 0.0)

    def add_examples(self, descriptors, labels) -> None:
        descriptors = np.asarray(descriptors, dtype=np.float64)
        labels = np.asarray(labels, dtype=np.int64)
        if len(descriptors) == 0:
            return
        self.class_counts += np.bincount(labels, minlength=self.settings.num_labels)
        for tree in self.trees:
            tree.add_examples(descriptors, labels)

    def split_step(self, budget: int | None = None) -> int:
        weights = self.class_weights()
        return sum(tree.split_step(weights, budget) for tree in self.trees)

    def predict_pmf(self, descriptors, backend=None) -> np.ndarray:
        """Tree-averaged class pmfs, one row per descriptor."""
        descriptors = np.asarray(descriptors, dtype=np.float64)
        k = self.settings.num_labels
        if descriptors.ndim != 2 or descriptors.shape[1] != self.settings.feature_dim:
            raise ContractViolation(f"descriptors must be (n, {self.settings.feature_dim})")
        weights = self.class_weights()
        if weights is None:
            weights = np.ones(k)
        acc = np.zeros((len(descriptors), k))
        for tree in self.trees:
            hist = tree.leaf_histograms()
            mass = hist * weights[None, :]
            totals = mass.sum(axis=1, keepdims=True)
            uniform = np.full(k, 1.0 / k)
            pmfs = np.where(totals > 0, mass / np.maximum(totals, 1e-300), uniform)
            acc += pmfs[tree.route(descriptors, backend=backend)]
        return acc / self.settings.num_trees

    def predict_label(self, descriptors, backend=None) -> np.ndarray:
        """Most probable label per row; ties resolve to the lowest id."""
        return np.argmax(self.predict_pmf(descriptors, backend=backend), axis=1)

    def stats(self) -> dict:
        return {
            "num_trees": self.settings.num_trees,
            "total_examples": int(self.class_counts.sum()),
            "class_counts": self.class_counts.tolist(),
            "trees": [
                {
                    "nodes": len(t.feat),
                    "leaves": len(t.leaves),
                    "splits": t.splits_done,
                    "max_depth": t.max_depth_reached(),
                    "stored": int(sum(l.reservoir.total() for l in t.leaves.values())),
                    "pending": len(t.heap),
                    "queue_head": (
                        {"node_id": int(t.heap[0][1]), "splittability": -float(t.heap[0][0])}
                        if t.heap
                        else None
                    ),
                }
                for t in self.trees
            ],
        }

    # -- checkpointing ----------------------------------------------------

    _MAGIC = b"PBFR"
    _VERSION = 1

    def save_checkpoint(self) -> bytes:
        """Serialize full training state; resuming is bit-identical."""
        out = bytearray()
        out += self._MAGIC
        out += struct.pack("<I", self._VERSION)
        blob = json.dumps(asdict(self.settings), sort_keys=True).encode()
        out += struct.pack("<I", len(blob)) + blob
        out += self.class_counts.astype("<i8").tobytes()
        for tree in self.trees:
            state = json.dumps(tree.rng.bit_generator.state, sort_keys=True).encode()
            out += struct.pack("<I", len(state)) + state
            n = len(tree.feat)
            out += struct.pack("<I", n)
            out += np.asarray(tree.feat, dtype="<i4").tobytes()
            out += np.asarray(tree.tau, dtype="<f8").tobytes()
            out += np.asarray(tree.left, dtype="<i4").tobytes()
            out += np.asarray(tree.right, dtype="<i4").tobytes()
            out += struct.pack("<I", tree.splits_done)
            out += struct.pack("<I", len(tree.leaves))
            for node_id in sorted(tree.leaves):
                leaf = tree.leaves[node_id]
                out += struct.pack(
                    "<IIQB", node_id, leaf.depth, leaf.version, int(leaf.no_viable)
                )
                res = leaf.reservoir
                out += res.seen.astype("<i8").tobytes()
                for bucket in res.buckets:
                    out += struct.pack("<I", len(bucket))
                    if bucket:
                        out += np.stack(bucket).astype("<f8").tobytes()
            out += struct.pack("<I", len(tree.heap))
            for prio, node_id, version in tree.heap:
                out += struct.pack("<dIQ", prio, node_id, version)
        return bytes(out)

    @classmethod
    def load_checkpoint(cls, data: bytes) -> "RandomForest":
        off = 0

        def take(n):
            nonlocal off
            if off + n > len(data):
                raise ContractViolation(f"truncated checkpoint at byte {off}")
            chunk = data[off : off + n]
            off += n
            return chunk

        if take(4) != cls._MAGIC:
            raise ContractViolation("bad checkpoint magic")
        (version,) = struct.unpack("<I", take(4))
        if version != cls._VERSION:
            raise ContractViolation(f"unsupported checkpoint version {version}")
        (blen,) = struct.unpack("<I", take(4))
        settings = ForestSettings(**json.loads(take(blen)))
        forest = cls(settings)
        k = settings.num_labels
        d = settings.feature_dim
        forest.class_counts = np.frombuffer(take(8 * k), dtype="<i8").astype(np.int64)
        for tree in forest.trees:
            (slen,) = struct.unpack("<I", take(4))
            tree.rng.bit_generator.state = json.loads(take(slen))
            (n,) = struct.unpack("<I", take(4))
            tree.feat = np.frombuffer(take(4 * n), dtype="<i4").astype(int).tolist()
            tree.tau = np.frombuffer(take(8 * n), dtype="<f8").astype(float).tolist()
            tree.left = np.frombuffer(take(4 * n), dtype="<i4").astype(int).tolist()
            tree.right = np.frombuffer(take(4 * n), dtype="<i4").astype(int).tolist()
            (tree.splits_done,) = struct.unpack("<I", take(4))
            (nleaves,) = struct.unpack("<I", take(4))
            tree.leaves = {}
            for _ in range(nleaves):
                node_id, depth, lversion, viable = struct.unpack("<IIQB", take(17))
                leaf = Leaf(node_id, depth, ExampleReservoir(settings.reservoir_capacity, k))
                leaf.version = lversion
                leaf.no_viable = bool(viable)
                leaf.reservoir.seen = np.frombuffer(take(8 * k), dtype="<i8").astype(np.int64)
                for label in range(k):
                    (cnt,) = struct.unpack("<I", take(4))
                    if cnt:
                        rows = np.frombuffer(take(8 * cnt * d), dtype="<f8").reshape(cnt, d)
                        leaf.reservoir.buckets[label] = [row.copy() for row in rows]
                tree.leaves[node_id] = leaf
            (nheap,) = struct.unpack("<I", take(4))
            tree.heap = [
                struct.unpack("<dIQ", take(20)) for _ in range(nheap)
            ]
            tree.heap = [(p, int(nid), int(v)) for p, nid, v in tree.heap]
            tree._flat = None
        if off != len(data):
            raise ContractViolation("trailing bytes in checkpoint")
        return forest
