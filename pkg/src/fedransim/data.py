"""Datasets, train/test splitting, client partitioning and imbalance metrics.

The experiment's data layout is family-based: 9 ransomware families plus a
benign class. Partition plans record which training rows land at which
client; the benign pool is intentionally replicated to every client, all
other per-client row sets are disjoint.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

N_FEATURES = 15

RANSOMWARE_FAMILIES = (
    "Sodinokibi",
    "LockBit",
    "Babuk/Babyk",
    "DJVu",
    "NetWalker",
    "Chaos",
    "Hive",
    "BlackCat",
    "WannaCry",
)
BENIGN = "Benign"
ALL_FAMILIES = RANSOMWARE_FAMILIES + (BENIGN,)

# Per-client training counts for the fixed imbalanced experiment layout
# (rows = clients 1..3, cols = ransomware families in registry order).
# Every family column sums to 120, client totals are 540/270/270, and the
# resulting per-client imbalance ratios match the expected diagnostics;
# see tests/test_data.py for the brute-force re-verification.
CANONICAL_IMBALANCED_COUNTS = np.array(
    [
        [83, 83, 83, 83, 83, 26, 39, 30, 30],
        [22, 22, 22, 22, 22, 60, 60, 20, 20],
        [15, 15, 15, 15, 15, 34, 21, 70, 70],
    ],
    dtype=np.int64,
)

CANONICAL_TRAIN_PER_FAMILY = 120
CANONICAL_TEST_PER_FAMILY = 20
CANONICAL_BENIGN_TRAIN = 1700
CANONICAL_BENIGN_TEST = 300


class DataError(ValueError):
    """Invalid dataset shape or content for the requested operation."""


@dataclass(frozen=True)
class ClassRegistry:
    """Fixed class ordering for a task; maps family names to label indices."""

    task: str  # "multiclass" or "binary"
    class_names: tuple

    def label_of(self, family: str) -> int:
        if self.task == "multiclass":
            try:
                return ALL_FAMILIES.index(family)
            except ValueError:
                raise DataError(f"unknown family {family!r}") from None
        if family == BENIGN:
            return 0
        if family in RANSOMWARE_FAMILIES:
            return 1
        raise DataError(f"unknown family {family!r}")

    @property
    def num_classes(self) -> int:
        return len(self.class_names)


def multiclass_registry() -> ClassRegistry:
    return ClassRegistry("multiclass", ALL_FAMILIES)


def binary_registry() -> ClassRegistry:
    return ClassRegistry("binary", (BENIGN, "Malware"))


@dataclass(frozen=True)
class FeatureVector:
    """A single 15-dim static-feature record with its family tag."""

    features: np.ndarray
    family: str

    def __post_init__(self):
        if self.features.shape != (N_FEATURES,):
            raise DataError(f"expected {N_FEATURES} features, got {self.features.shape}")
        if not np.all(np.isfinite(self.features)):
            raise DataError("non-finite feature value")


@dataclass
class Dataset:
    """Column-oriented collection of feature vectors with family tags."""

    features: np.ndarray  # (n, 15) float64
    families: np.ndarray  # (n,) str

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64).reshape(-1, N_FEATURES)
        self.families = np.asarray(self.families, dtype=object)
        if len(self.features) != len(self.families):
            raise DataError("features/families length mismatch")
        if len(self.features) and not np.all(np.isfinite(self.features)):
            raise DataError("non-finite feature value")

    def __len__(self) -> int:
        return len(self.features)

    def labels(self, registry: ClassRegistry) -> np.ndarray:
        return np.array([registry.label_of(f) for f in self.families], dtype=np.int64)

    def family_counts(self) -> dict:
        counts: dict = {}
        for f in self.families:
            counts[f] = counts.get(f, 0) + 1
        return counts

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.features[idx], self.families[idx])


def concat(datasets) -> Dataset:
    parts = [d for d in datasets if len(d)]
    if not parts:
        return Dataset(np.zeros((0, N_FEATURES)), np.array([], dtype=object))
    return Dataset(
        np.concatenate([d.features for d in parts]),
        np.concatenate([d.families for d in parts]),
    )


# --- file format --------------------------------------------------------------
# Delimited text, header f1..f15,family; floats in shortest round-trip form.

CSV_HEADER = ",".join([f"f{i + 1}" for i in range(N_FEATURES)] + ["family"])


def save_dataset(ds: Dataset, path) -> None:
    with open(path, "w") as f:
        f.write(CSV_HEADER + "\n")
        for row, fam in zip(ds.features, ds.families):
            f.write(",".join(repr(float(v)) for v in row) + f",{fam}\n")


def load_dataset(path) -> Dataset:
    with open(path) as f:
        header = f.readline().strip()
        if header != CSV_HEADER:
            raise DataError(f"bad dataset header in {path}")
        feats, fams = [], []
        for lineno, line in enumerate(f, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != N_FEATURES + 1:
                raise DataError(f"{path}:{lineno}: expected {N_FEATURES + 1} columns")
            feats.append([float(v) for v in parts[:N_FEATURES]])
            fams.append(parts[N_FEATURES])
    if not feats:
        return Dataset(np.zeros((0, N_FEATURES)), np.array([], dtype=object))
    return Dataset(np.array(feats), np.array(fams, dtype=object))


# --- train/test split ---------------------------------------------------------


def split_train_test(dataset: Dataset, seed: int) -> tuple[Dataset, Dataset]:
    """Seeded per-family split: ransomware families hold out 1/7 of their
    samples (20 of 140 at canonical scale), benign holds out 15% (300 of 2000).
    Selection is random without replacement; train and test are disjoint.
    """
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(101,)))
    train_idx, test_idx = [], []
    fams = np.asarray(dataset.families)
    for family in sorted(set(fams.tolist())):
        idx = np.flatnonzero(fams == family)
        n = len(idx)
        if family == BENIGN:
            n_test = int(round(0.15 * n))
        else:
            n_test = n // 7
        if n_test < 1 or n - n_test < 1:
            raise DataError(f"family {family!r} has too few samples to split ({n})")
        perm = rng.permutation(idx)
        test_idx.extend(perm[:n_test].tolist())
        train_idx.extend(perm[n_test:].tolist())
    return dataset.subset(sorted(train_idx)), dataset.subset(sorted(test_idx))


# --- partition plans ----------------------------------------------------------


@dataclass
class PartitionPlan:
    """Per-client, per-class assignment of training rows.

    cell_indices[i][j] holds the train-set row indices of class j at client i
    (registry multiclass order; benign is the last column and is the same
    index set at every client).
    """

    cell_indices: list  # K x Q lists of np.int64 arrays
    test_counts: dict
    seed: int
    kind: str  # "balanced" or "canonical_imbalanced"
    remainder_note: str = ""

    @property
    def num_clients(self) -> int:
        return len(self.cell_indices)

    @property
    def counts(self) -> np.ndarray:
        return np.array(
            [[len(cell) for cell in row] for row in self.cell_indices], dtype=np.int64
        )

    def client_indices(self, i: int) -> np.ndarray:
        return np.concatenate(self.cell_indices[i])

    def materialize(self, train: Dataset) -> list[Dataset]:
        return [train.subset(self.client_indices(i)) for i in range(self.num_clients)]


def _family_index_map(train: Dataset) -> dict:
    fams = np.asarray(train.families)
    return {family: np.flatnonzero(fams == family) for family in set(fams.tolist())}


def partition_balanced(train: Dataset, K: int = 3, seed: int = 0) -> PartitionPlan:
    """Even split of each ransomware family across K clients; the full benign
    pool is replicated to every client. Non-divisible remainders are handed
    out round-robin and recorded in the plan.
    """
    by_family = _family_index_map(train)
    missing = [f for f in ALL_FAMILIES if f not in by_family]
    if missing:
        raise DataError(f"train set missing families: {missing}")
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(102,)))
    cells: list[list[np.ndarray]] = [[] for _ in range(K)]
    remainders = []
    for family in RANSOMWARE_FAMILIES:
        idx = rng.permutation(by_family[family])
        base, rem = divmod(len(idx), K)
        sizes = [base + (1 if i < rem else 0) for i in range(K)]
        if rem:
            remainders.append(f"{family}: {rem} extra sample(s) to clients 0..{rem - 1}")
        off = 0
        for i in range(K):
            cells[i].append(np.sort(idx[off : off + sizes[i]]))
            off += sizes[i]
    benign_idx = np.sort(by_family[BENIGN])
    for i in range(K):
        cells[i].append(benign_idx)
    return PartitionPlan(
        cell_indices=cells,
        test_counts={},
        seed=seed,
        kind="balanced",
        remainder_note="; ".join(remainders),
    )


def partition_canonical_imbalanced(train: Dataset, seed: int = 0) -> PartitionPlan:
    """Fixed-shape uneven split: per-client family counts follow
    CANONICAL_IMBALANCED_COUNTS (client totals 540/270/270); which concrete
    samples fill each cell is seeded-random. Requires exactly 120 training
    samples per family and 1700 benign.
    """
    by_family = _family_index_map(train)
    for family in RANSOMWARE_FAMILIES:
        n = len(by_family.get(family, ()))
        if n != CANONICAL_TRAIN_PER_FAMILY:
            raise DataError(
                f"canonical plan needs exactly {CANONICAL_TRAIN_PER_FAMILY} training "
                f"samples of {family!r}, got {n}"
            )
    n_benign = len(by_family.get(BENIGN, ()))
    if n_benign != CANONICAL_BENIGN_TRAIN:
        raise DataError(
            f"canonical plan needs exactly {CANONICAL_BENIGN_TRAIN} benign training samples, got {n_benign}"
        )
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(103,)))
    K = CANONICAL_IMBALANCED_COUNTS.shape[0]
    cells: list[list[np.ndarray]] = [[] for _ in range(K)]
    for j, family in enumerate(RANSOMWARE_FAMILIES):
        idx = rng.permutation(by_family[family])
        off = 0
        for i in range(K):
            c = int(CANONICAL_IMBALANCED_COUNTS[i, j])
            cells[i].append(np.sort(idx[off : off + c]))
            off += c
    benign_idx = np.sort(by_family[BENIGN])
    for i in range(K):
        cells[i].append(benign_idx)
    return PartitionPlan(
        cell_indices=cells,
        test_counts={},
        seed=seed,
        kind="canonical_imbalanced",
    )


# --- imbalance metrics --------------------------------------------------------


def imbalance_ratio(counts) -> float:
    """max/min over the given class counts; the caller picks the class subset."""
    counts = np.asarray(counts, dtype=np.int64)
    if counts.size == 0:
        raise DataError("empty count vector")
    if np.any(counts <= 0):
        raise DataError("imbalance ratio undefined for zero class counts")
    return float(counts.max()) / float(counts.min())


def imbalance_ratio_exact(counts) -> Fraction:
    counts = np.asarray(counts, dtype=np.int64)
    if np.any(counts <= 0):
        raise DataError("imbalance ratio undefined for zero class counts")
    return Fraction(int(counts.max()), int(counts.min()))


def global_imbalance_ratio(plan: PartitionPlan, include_benign: bool = False) -> float:
    """Ratio over per-class totals across all clients.

    Replicated benign rows are counted once (union of indices), so the global
    benign total is the pool size, not pool x K.
    """
    Q = len(plan.cell_indices[0])
    totals = []
    last = Q if include_benign else Q - 1
    for j in range(last):
        union: set = set()
        for i in range(plan.num_clients):
            union.update(plan.cell_indices[i][j].tolist())
        totals.append(len(union))
    return imbalance_ratio(totals)


def client_gamma_diagnostics(plan: PartitionPlan, train: Dataset) -> list[dict]:
    """Per-client imbalance ratios recomputed from materialized datasets.

    Returns one dict per client with keys ransomware/with_benign/binary.
    """
    registry = multiclass_registry()
    out = []
    for client_ds in plan.materialize(train):
        labels = client_ds.labels(registry)
        counts = np.bincount(labels, minlength=registry.num_classes)
        rw = counts[: len(RANSOMWARE_FAMILIES)]
        benign = counts[len(RANSOMWARE_FAMILIES)]
        out.append(
            {
                "ransomware": imbalance_ratio(rw),
                "with_benign": imbalance_ratio(counts),
                "binary": imbalance_ratio([benign, int(rw.sum())]),
            }
        )
    return out


def round_half_up(x: float, decimals: int) -> float:
    scale = 10**decimals
    return np.floor(x * scale + 0.5) / scale


def truncate(x: float, decimals: int) -> float:
    scale = 10**decimals
    return np.floor(x * scale) / scale


# --- synthetic data -----------------------------------------------------------


@dataclass(frozen=True)
class SyntheticClassSpec:
    family: str
    mean: np.ndarray  # (15,)
    stddev: float
    count: int

    def __post_init__(self):
        if self.stddev <= 0:
            raise DataError("stddev must be > 0")
        if self.count < 0:
            raise DataError("count must be >= 0")
        if np.asarray(self.mean).shape != (N_FEATURES,):
            raise DataError(f"mean must have {N_FEATURES} dims")


def default_synthetic_spec(
    count_per_family: int = 140,
    benign_count: int = 2000,
    separation: float = 4.0,
    stddev: float = 1.0,
) -> list[SyntheticClassSpec]:
    """One Gaussian blob per class; any two class means are exactly
    `separation` stddevs apart (each mean sits on its own axis at
    separation/sqrt(2)).
    """
    specs = []
    coord = separation * stddev / np.sqrt(2.0)
    for c, family in enumerate(ALL_FAMILIES):
        mean = np.zeros(N_FEATURES)
        mean[c] = coord
        count = benign_count if family == BENIGN else count_per_family
        specs.append(SyntheticClassSpec(family, mean, stddev, count))
    return specs


def generate_synthetic(specs: list[SyntheticClassSpec], seed: int) -> Dataset:
    """Seeded Gaussian samples per class, concatenated in spec order."""
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(104,)))
    feats, fams = [], []
    for spec in specs:
        if spec.count == 0:
            continue
        feats.append(rng.normal(spec.mean, spec.stddev, size=(spec.count, N_FEATURES)))
        fams.extend([spec.family] * spec.count)
    if not feats:
        return Dataset(np.zeros((0, N_FEATURES)), np.array([], dtype=object))
    return Dataset(np.concatenate(feats), np.array(fams, dtype=object))


# --- normalization ------------------------------------------------------------


def fit_zscore(features: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-dimension mean/std from the training split; std floored to avoid
    division by zero on constant columns."""
    mean = features.mean(axis=0)
    std = features.std(axis=0)
    std = np.where(std < 1e-12, 1.0, std)
    return mean, std


def apply_zscore(features: np.ndarray, mean: np.ndarray, std: np.ndarray) -> np.ndarray:
    return (features - mean) / std


# --- plan file ----------------------------------------------------------------


def save_plan(plan: PartitionPlan, train: Dataset, path) -> None:
    gammas = client_gamma_diagnostics(plan, train)
    doc = {
        "kind": plan.kind,
        "seed": plan.seed,
        "class_names": list(ALL_FAMILIES),
        "counts": plan.counts.tolist(),
        "cell_indices": [
            [cell.tolist() for cell in row] for row in plan.cell_indices
        ],
        "remainder_note": plan.remainder_note,
        "gamma_per_client": gammas,
        "gamma_global_ransomware": global_imbalance_ratio(plan, include_benign=False),
        "gamma_global_with_benign": global_imbalance_ratio(plan, include_benign=True),
    }
    with open(path, "w") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")


def load_plan(path) -> PartitionPlan:
    with open(path) as f:
        doc = json.load(f)
    cells = [
        [np.array(cell, dtype=np.int64) for cell in row] for row in doc["cell_indices"]
    ]
    return PartitionPlan(
        cell_indices=cells,
        test_counts={},
        seed=doc["seed"],
        kind=doc["kind"],
        remainder_note=doc.get("remainder_note", ""),
    )
