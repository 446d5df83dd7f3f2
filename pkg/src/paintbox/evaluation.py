"""Multi-class forest evaluation on the UCI Poker Hand task.

Each example is five playing cards as (suit, rank) integer pairs and the
class is the poker hand category (0 = nothing in hand .. 9 = royal
flush), a 10-way problem with severe class imbalance: the two most
common classes cover over 92% of the data while a royal flush appears
three times in a million test hands.  That imbalance is exactly what
makes the task a good stress test for reservoir-based streaming training
and for inverse-frequency reweighting.

The official UCI files are downloaded by scripts/fetch_poker.py; this
module can also synthesize a statistically matched stand-in corpus with
the exact per-class counts of the official split, for offline work.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .forest import ForestSettings, RandomForest

TRAIN_FILE = "poker-hand-training-true.data"
TEST_FILE = "poker-hand-testing.data"

NUM_CLASSES = 10
NUM_ATTRIBUTES = 10  # S1,C1 .. S5,C5

CLASS_NAMES = [
    "nothing",
    "one pair",
    "two pairs",
    "three of a kind",
    "straight",
    "flush",
    "full house",
    "four of a kind",
    "straight flush",
    "royal flush",
]

# Per-class example counts of the official split, from the dataset's
# documentation; the surrogate generator reproduces them exactly.
OFFICIAL_TRAIN_COUNTS = (12493, 10599, 1206, 513, 93, 54, 36, 6, 5, 5)
OFFICIAL_TEST_COUNTS = (
    501209,
    422498,
    47622,
    21121,
    3885,
    1996,
    1424,
    230,
    12,
    3,
)


class PokerFormatError(ValueError):
    """A data file failed to parse; carries the 1-based line number."""

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass
class LabelledDataset:
    """Train/test attribute matrices plus integer class vectors."""

    train_x: np.ndarray
    train_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray

    def class_histogram(self, split: str = "test") -> np.ndarray:
        y = self.test_y if split == "test" else self.train_y
        return np.bincount(y, minlength=NUM_CLASSES)


def _parse_file(path: Path) -> tuple[np.ndarray, np.ndarray]:
    rows = []
    labels = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != NUM_ATTRIBUTES + 1:
                raise PokerFormatError(
                    f"expected {NUM_ATTRIBUTES + 1} fields, got {len(row)}", lineno
                )
            try:
                values = [int(v) for v in row]
            except ValueError:
                raise PokerFormatError(f"non-integer field in {row!r}", lineno) from None
            suits = values[0:10:2]
            ranks = values[1:10:2]
            if any(not 1 <= s <= 4 for s in suits):
                raise PokerFormatError("suit outside 1..4", lineno)
            if any(not 1 <= r <= 13 for r in ranks):
                raise PokerFormatError("rank outside 1..13", lineno)
            if not 0 <= values[10] <= 9:
                raise PokerFormatError("class outside 0..9", lineno)
            rows.append(values[:10])
            labels.append(values[10])
    x = np.asarray(rows, dtype=np.int64).reshape(-1, NUM_ATTRIBUTES)
    y = np.asarray(labels, dtype=np.int64)
    return x, y


def load_poker(data_dir) -> LabelledDataset:
    """Load the official train/test files from a directory."""
    base = Path(data_dir)
    train_x, train_y = _parse_file(base / TRAIN_FILE)
    test_x, test_y = _parse_file(base / TEST_FILE)
    return LabelledDataset(train_x, train_y, test_x, test_y)


# -- hand ranking ----------------------------------------------------------

_STRAIGHT_HIGH_ACE = np.array([1, 10, 11, 12, 13])


def rank_hands(suits: np.ndarray, ranks: np.ndarray) -> np.ndarray:
    """Class 0..9 for each hand; suits (N,5) in 1..4, ranks (N,5) in 1..13.

    Aces are rank 1 and play high in ten-to-ace straights.
    """
    suits = np.asarray(suits, dtype=np.int64).reshape(-1, 5)
    ranks = np.asarray(ranks, dtype=np.int64).reshape(-1, 5)
    n = len(suits)
    rank_counts = np.zeros((n, 14), dtype=np.int64)
    np.add.at(rank_counts, (np.arange(n)[:, None], ranks), 1)
    rank_counts = rank_counts[:, 1:]

    max_of_kind = rank_counts.max(axis=1)
    pairs = (rank_counts == 2).sum(axis=1)
    has_trips = (rank_counts == 3).any(axis=1)

    flush = (suits == suits[:, :1]).all(axis=1)
    sorted_ranks = np.sort(ranks, axis=1)
    distinct = max_of_kind == 1
    span4 = sorted_ranks[:, 4] - sorted_ranks[:, 0] == 4
    ace_high = (sorted_ranks == _STRAIGHT_HIGH_ACE[None, :]).all(axis=1)
    straight = distinct & (span4 | ace_high)

    out = np.zeros(n, dtype=np.int64)
    out[pairs == 1] = 1
    out[pairs == 2] = 2
    out[has_trips] = 3
    out[straight] = 4
    out[flush] = 5
    out[has_trips & (pairs == 1)] = 6
    out[max_of_kind == 4] = 7
    out[straight & flush] = 8
    out[straight & flush & ace_high] = 9
    return out


# -- surrogate corpus -------------------------------------------------------


def _deal_random_hands(rng: np.random.Generator, count: int) -> np.ndarray:
    """(count, 5) card codes 0..51, distinct within each hand."""
    out = np.empty((0, 5), dtype=np.int64)
    while len(out) < count:
        need = count - len(out)
        batch = rng.integers(0, 52, size=(int(need * 1.25) + 64, 5))
        srt = np.sort(batch, axis=1)
        ok = (srt[:, 1:] != srt[:, :-1]).all(axis=1)
        out = np.concatenate([out, batch[ok]])
    return out[:count]


def _cards_to_attrs(cards: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return cards // 13 + 1, cards % 13 + 1


def _make_straights(rng, count, *, flush: bool, royal: bool) -> tuple[np.ndarray, np.ndarray]:
    if royal:
        lows = np.full(count, 10, dtype=np.int64)
    elif flush:
        lows = rng.integers(1, 10, size=count)  # ace-low .. nine-low, never royal
    else:
        lows = rng.integers(1, 11, size=count)
    ranks = lows[:, None] + np.arange(5)[None, :]
    ranks = np.where(ranks > 13, ranks - 13, ranks)  # ten-to-ace wraps to ace=1
    if flush or royal:
        suits = np.repeat(rng.integers(1, 5, size=count)[:, None], 5, axis=1)
    else:
        suits = rng.integers(1, 5, size=(count, 5))
        while True:
            same = (suits == suits[:, :1]).all(axis=1)
            if not same.any():
                break
            suits[same] = rng.integers(1, 5, size=(int(same.sum()), 5))
    return suits, ranks


def _make_flushes(rng, count) -> tuple[np.ndarray, np.ndarray]:
    suits = np.repeat(rng.integers(1, 5, size=count)[:, None], 5, axis=1)
    ranks = np.empty((count, 5), dtype=np.int64)
    filled = 0
    while filled < count:
        need = count - filled
        cand = np.argsort(rng.random((need, 13)), axis=1)[:, :5] + 1
        srt = np.sort(cand, axis=1)
        span4 = srt[:, 4] - srt[:, 0] == 4
        ace_high = (srt == _STRAIGHT_HIGH_ACE[None, :]).all(axis=1)
        keep = cand[~(span4 | ace_high)]
        take = min(len(keep), need)
        ranks[filled : filled + take] = keep[:take]
        filled += take
    return suits, ranks


def _make_full_houses(rng, count) -> tuple[np.ndarray, np.ndarray]:
    trip_rank = rng.integers(1, 14, size=count)
    pair_rank = rng.integers(1, 13, size=count)
    pair_rank = np.where(pair_rank >= trip_rank, pair_rank + 1, pair_rank)
    omit = rng.integers(0, 4, size=count)
    trip_suits = np.array([[s for s in range(4) if s != o] for o in range(4)])[omit] + 1
    pair_pairs = np.array([(a, b) for a in range(4) for b in range(a + 1, 4)])
    pair_suits = pair_pairs[rng.integers(0, 6, size=count)] + 1
    ranks = np.concatenate(
        [np.repeat(trip_rank[:, None], 3, axis=1), np.repeat(pair_rank[:, None], 2, axis=1)],
        axis=1,
    )
    suits = np.concatenate([trip_suits, pair_suits], axis=1)
    return suits, ranks


def _make_quads(rng, count) -> tuple[np.ndarray, np.ndarray]:
    quad_rank = rng.integers(1, 14, size=count)
    kicker_rank = rng.integers(1, 13, size=count)
    kicker_rank = np.where(kicker_rank >= quad_rank, kicker_rank + 1, kicker_rank)
    kicker_suit = rng.integers(1, 5, size=count)
    ranks = np.concatenate(
        [np.repeat(quad_rank[:, None], 4, axis=1), kicker_rank[:, None]], axis=1
    )
    suits = np.concatenate(
        [np.tile(np.arange(1, 5), (count, 1)), kicker_suit[:, None]], axis=1
    )
    return suits, ranks


def generate_poker_split(rng: np.random.Generator, counts) -> tuple[np.ndarray, np.ndarray]:
    """Attribute matrix and labels with exactly ``counts[z]`` hands of class z.

    Classes 0-3 come from rejection over uniform random deals, so their
    within-class distribution matches random dealing; the rare made hands
    are constructed uniformly over their class. Card order is shuffled
    per hand, as in dealt data.
    """
    counts = np.asarray(counts, dtype=np.int64)
    buckets: list[list[np.ndarray]] = [[] for _ in range(NUM_CLASSES)]
    have = np.zeros(NUM_CLASSES, dtype=np.int64)

    want_random = counts[:4]
    while (have[:4] < want_random).any():
        shortfall = int((want_random - have[:4]).clip(min=0).sum())
        # nothing-in-hand is half of random deals; scale so one or two
        # rounds usually finish the common classes, capped to bound memory
        cards = _deal_random_hands(rng, min(max(shortfall * 3, 4096), 2_000_000))
        suits, ranks = _cards_to_attrs(cards)
        cls = rank_hands(suits, ranks)
        for z in range(4):
            if have[z] >= want_random[z]:
                continue
            rows = np.flatnonzero(cls == z)[: want_random[z] - have[z]]
            if rows.size:
                buckets[z].append(np.concatenate([suits[rows], ranks[rows]], axis=1))
                have[z] += rows.size

    makers = {
        4: lambda n: _make_straights(rng, n, flush=False, royal=False),
        5: lambda n: _make_flushes(rng, n),
        6: lambda n: _make_full_houses(rng, n),
        7: lambda n: _make_quads(rng, n),
        8: lambda n: _make_straights(rng, n, flush=True, royal=False),
        9: lambda n: _make_straights(rng, n, flush=True, royal=True),
    }
    for z, make in makers.items():
        if counts[z]:
            suits, ranks = make(int(counts[z]))
            buckets[z].append(np.concatenate([suits, ranks], axis=1))
            have[z] += counts[z]

    pairs = np.concatenate([np.concatenate(b) for b in buckets if b])
    labels = np.repeat(np.arange(NUM_CLASSES), counts)
    order = rng.permutation(len(pairs))
    pairs, labels = pairs[order], labels[order]

    # per-hand card order is arbitrary in dealt data
    deal_order = np.argsort(rng.random((len(pairs), 5)), axis=1)
    rows = np.arange(len(pairs))[:, None]
    suits = pairs[:, :5][rows, deal_order]
    ranks = pairs[:, 5:][rows, deal_order]
    x = np.empty((len(pairs), NUM_ATTRIBUTES), dtype=np.int64)
    x[:, 0::2] = suits
    x[:, 1::2] = ranks
    return x, labels


def write_poker_files(out_dir, *, seed: int = 0) -> dict:
    """Write surrogate train/test files with the official class counts."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(77,)))
    written = {}
    for name, counts in (
        (TRAIN_FILE, OFFICIAL_TRAIN_COUNTS),
        (TEST_FILE, OFFICIAL_TEST_COUNTS),
    ):
        x, y = generate_poker_split(rng, counts)
        body = np.concatenate([x, y[:, None]], axis=1)
        with open(out / name, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerows(body.tolist())
        written[name] = len(body)
    (out / "SURROGATE.txt").write_text(
        "Synthetic stand-in for the UCI Poker Hand files, generated by\n"
        "paintbox gen-poker with the official per-class example counts.\n"
        f"seed: {seed}\n"
    )
    return written


# -- evaluation protocol ----------------------------------------------------


def default_poker_settings(*, reweight: bool = False, seed: int = 0) -> ForestSettings:
    # Larger trees than the interactive defaults: ten ordinal attributes
    # need deep axis-aligned splits, and an offline benchmark has no frame
    # budget to respect.  The high split threshold matters for the
    # reweighted arm: with inverse-frequency weights a handful of rare-class
    # examples dominate the gain, and splitting on thin evidence carves them
    # into leaves too specific to recall anything at test time.
    return ForestSettings(
        num_trees=8,
        num_labels=NUM_CLASSES,
        feature_dim=NUM_ATTRIBUTES,
        max_depth=25,
        min_examples=200,
        reservoir_capacity=2048,
        reweight=reweight,
        seed=seed,
    )


@dataclass
class EvalResult:
    raw_accuracies: list
    normalized_accuracies: list
    confusion: np.ndarray
    reweight: bool
    repeats: int
    epochs: int
    elapsed_s: float

    @property
    def raw_mean(self) -> float:
        return float(np.mean(self.raw_accuracies))

    @property
    def raw_std(self) -> float:
        return float(np.std(self.raw_accuracies, ddof=1)) if len(self.raw_accuracies) > 1 else 0.0

    @property
    def normalized_mean(self) -> float:
        return float(np.mean(self.normalized_accuracies))

    @property
    def normalized_std(self) -> float:
        if len(self.normalized_accuracies) > 1:
            return float(np.std(self.normalized_accuracies, ddof=1))
        return 0.0

    def to_dict(self) -> dict:
        return {
            "raw_accuracy_mean": self.raw_mean,
            "raw_accuracy_std": self.raw_std,
            "normalized_accuracy_mean": self.normalized_mean,
            "normalized_accuracy_std": self.normalized_std,
            "raw_accuracies": [float(a) for a in self.raw_accuracies],
            "normalized_accuracies": [float(a) for a in self.normalized_accuracies],
            "confusion": self.confusion.tolist(),
            "reweight": self.reweight,
            "repeats": self.repeats,
            "epochs": self.epochs,
            "elapsed_s": self.elapsed_s,
        }


def confusion_matrix(truth: np.ndarray, predicted: np.ndarray) -> np.ndarray:
    flat = truth * NUM_CLASSES + predicted
    return np.bincount(flat, minlength=NUM_CLASSES * NUM_CLASSES).reshape(
        NUM_CLASSES, NUM_CLASSES
    )


def normalized_accuracy(confusion: np.ndarray) -> float:
    """Mean per-class recall over classes that appear in the truth."""
    support = confusion.sum(axis=1)
    present = support > 0
    if present.sum() < 2:
        raise ValueError("normalized accuracy needs at least two classes present")
    recalls = np.diag(confusion)[present] / support[present]
    return float(np.mean(recalls))


def train_streaming(
    forest: RandomForest,
    x: np.ndarray,
    y: np.ndarray,
    rng: np.random.Generator,
    *,
    epochs: int = 3,
    chunk_size: int | None = None,
) -> None:
    """Stream shuffled examples in chunks, splitting to quiescence after each.

    The default chunk is the whole epoch.  Small chunks commit the trees to
    splits chosen from early, noisy reservoirs; those choices are
    irrevocable, and on this workload they cost several points of accuracy.
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.int64)
    if chunk_size is None:
        chunk_size = len(x)
    for _ in range(epochs):
        order = rng.permutation(len(x))
        for start in range(0, len(x), chunk_size):
            rows = order[start : start + chunk_size]
            forest.add_examples(x[rows], y[rows])
            while forest.split_step() > 0:
                pass


def predict_in_chunks(
    forest: RandomForest, x: np.ndarray, *, chunk_size: int = 100_000
) -> np.ndarray:
    x = np.ascontiguousarray(x, dtype=np.float64)
    parts = [
        forest.predict_label(x[start : start + chunk_size])
        for start in range(0, len(x), chunk_size)
    ]
    return np.concatenate(parts) if parts else np.empty(0, dtype=np.int64)


def evaluate(
    dataset: LabelledDataset,
    *,
    reweight: bool = False,
    repeats: int = 5,
    epochs: int = 3,
    chunk_size: int | None = None,
    base_seed: int = 0,
    settings: ForestSettings | None = None,
    progress=None,
) -> EvalResult:
    """Train-and-test ``repeats`` forests; report mean and spread.

    Each repeat uses its own shuffling and forest seeds.  Normalized
    accuracy is the mean of per-class recalls, which weights a royal
    flush as heavily as half a million nothing-in-hand examples.
    """
    if len(np.unique(dataset.train_y)) < 2:
        raise ValueError("training split has fewer than two classes")
    started = time.perf_counter()
    raws, norms = [], []
    confusion_total = np.zeros((NUM_CLASSES, NUM_CLASSES), dtype=np.int64)
    for r in range(repeats):
        seed = base_seed + 1000 * r
        cfg = settings or default_poker_settings(reweight=reweight)
        cfg = replace(cfg, reweight=reweight, seed=seed)
        forest = RandomForest(cfg)
        rng = np.random.default_rng(np.random.SeedSequence(entropy=base_seed, spawn_key=(9, r)))
        train_streaming(
            forest, dataset.train_x, dataset.train_y, rng, epochs=epochs, chunk_size=chunk_size
        )
        predicted = predict_in_chunks(forest, dataset.test_x)
        conf = confusion_matrix(dataset.test_y, predicted)
        confusion_total += conf
        raws.append(float(np.mean(predicted == dataset.test_y)))
        norms.append(normalized_accuracy(conf))
        if progress is not None:
            progress(r, raws[-1], norms[-1])
    return EvalResult(
        raw_accuracies=raws,
        normalized_accuracies=norms,
        confusion=confusion_total,
        reweight=reweight,
        repeats=repeats,
        epochs=epochs,
        elapsed_s=time.perf_counter() - started,
    )


def majority_class_accuracy(dataset: LabelledDataset) -> float:
    """Raw test accuracy of always predicting the most common train class."""
    majority = int(np.bincount(dataset.train_y, minlength=NUM_CLASSES).argmax())
    return float(np.mean(dataset.test_y == majority))


def random_predictor_normalized(dataset: LabelledDataset, *, seeds: int = 20) -> float:
    """Mean normalized accuracy of a uniform random predictor."""
    values = []
    for s in range(seeds):
        rng = np.random.default_rng(np.random.SeedSequence(entropy=s, spawn_key=(31,)))
        predicted = rng.integers(0, NUM_CLASSES, size=len(dataset.test_y))
        values.append(normalized_accuracy(confusion_matrix(dataset.test_y, predicted)))
    return float(np.mean(values))


def format_report(result: EvalResult) -> str:
    lines = [
        f"repeats: {result.repeats}   epochs: {result.epochs}   "
        f"reweighted: {'yes' if result.reweight else 'no'}   "
        f"elapsed: {result.elapsed_s:.1f}s",
        f"raw accuracy:        {100 * result.raw_mean:6.2f} +/- {100 * result.raw_std:.2f} %",
        f"normalized accuracy: {100 * result.normalized_mean:6.2f} +/- "
        f"{100 * result.normalized_std:.2f} %",
        "",
        "confusion (rows = truth, counts summed over repeats):",
    ]
    header = "        " + "".join(f"{c:>9d}" for c in range(NUM_CLASSES))
    lines.append(header)
    for z in range(NUM_CLASSES):
        row = "".join(f"{int(v):>9d}" for v in result.confusion[z])
        lines.append(f"class {z:d} {row}")
    return "\n".join(lines)


def confusion_to_csv(confusion: np.ndarray, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["truth\\predicted"] + [str(c) for c in range(NUM_CLASSES)])
        for z in range(NUM_CLASSES):
            writer.writerow([str(z)] + [str(int(v)) for v in confusion[z]])


def save_report(result: EvalResult, path) -> None:
    Path(path).write_text(json.dumps(result.to_dict(), indent=2, sort_keys=True))
