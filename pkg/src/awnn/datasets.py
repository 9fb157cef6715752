"""Synthetic 2-D binary classification tasks and stratified hold-out splits."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .importance import ParameterError

DATASETS = ("double_moon", "spiral", "spiral_hard")
DEFAULT_SIZES = {"double_moon": 2500, "spiral": 2500, "spiral_hard": 5000}
DEFAULT_NOISE = 0.1
SPIRAL_TURNS = {"spiral": 2.0, "spiral_hard": 4.0}
DEFAULT_FRACTIONS = (0.7, 0.1, 0.2)
# vertical shift of the lower moon; 0.5 leaves a few noisy points on the wrong side
MOON_OFFSET = 0.25
ARM_SPACING = 2.0


@dataclass
class TabularDataset:
    features: np.ndarray
    labels: np.ndarray
    name: str = ""

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or self.features.shape[0] != self.labels.shape[0]:
            raise ParameterError("features must be N x F with one label per row")
        if not np.all(np.isfinite(self.features)):
            raise ParameterError("features must be finite")

    def __len__(self):
        return self.labels.shape[0]

    @property
    def n_classes(self) -> int:
        return int(self.labels.max()) + 1 if len(self) else 0

    def subset(self, idx) -> "TabularDataset":
        idx = np.asarray(idx, dtype=np.int64)
        return TabularDataset(self.features[idx], self.labels[idx], self.name)


@dataclass
class SplitSpec:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    stratified: bool = True
    seed: int = 0
    fractions: tuple = field(default=DEFAULT_FRACTIONS)

    def to_json(self) -> dict:
        return {
            "seed": self.seed,
            "stratified": self.stratified,
            "fractions": list(self.fractions),
            "train": self.train.tolist(),
            "val": self.val.tolist(),
            "test": self.test.tolist(),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "SplitSpec":
        return cls(
            np.asarray(doc["train"], dtype=np.int64),
            np.asarray(doc["val"], dtype=np.int64),
            np.asarray(doc["test"], dtype=np.int64),
            bool(doc.get("stratified", True)),
            int(doc.get("seed", 0)),
            tuple(doc.get("fractions", DEFAULT_FRACTIONS)),
        )


def _class_sizes(n):
    return n - n // 2, n // 2


def double_moon(n_samples, noise_std, rng):
    n0, n1 = _class_sizes(n_samples)
    t0 = rng.uniform(0.0, math.pi, n0)
    t1 = rng.uniform(0.0, math.pi, n1)
    upper = np.column_stack([np.cos(t0), np.sin(t0)])
    lower = np.column_stack([1.0 - np.cos(t1), MOON_OFFSET - np.sin(t1)])
    x = np.vstack([upper, lower])
    y = np.concatenate([np.zeros(n0, np.int64), np.ones(n1, np.int64)])
    return x, y


def two_spirals(n_samples, noise_std, rng, turns):
    # radius grows by ARM_SPACING per turn, so neighbouring arms of the two
    # classes are ARM_SPACING / 2 apart
    n0, n1 = _class_sizes(n_samples)
    arms = []
    for n, phase in ((n0, 0.0), (n1, math.pi)):
        # sqrt keeps the point density roughly uniform along the arm
        t = 2.0 * math.pi * turns * np.sqrt(rng.uniform(0.0, 1.0, n))
        r = ARM_SPACING * (0.25 + t / (2.0 * math.pi))
        arms.append(np.column_stack([r * np.cos(t + phase), r * np.sin(t + phase)]))
    x = np.vstack(arms)
    y = np.concatenate([np.zeros(n0, np.int64), np.ones(n1, np.int64)])
    return x, y


def generate(name: str, n_samples: int = None, noise_std: float = DEFAULT_NOISE, seed: int = 0):
    if name not in DATASETS:
        raise ParameterError(f"unknown dataset {name!r}; choose from {', '.join(DATASETS)}")
    n_samples = DEFAULT_SIZES[name] if n_samples is None else int(n_samples)
    if n_samples < 2:
        raise ParameterError("need at least 2 samples")
    if noise_std < 0:
        raise ParameterError("noise_std must be non-negative")
    rng = np.random.default_rng(seed)
    if name == "double_moon":
        x, y = double_moon(n_samples, noise_std, rng)
    else:
        x, y = two_spirals(n_samples, noise_std, rng, SPIRAL_TURNS[name])
    x = x + rng.normal(0.0, noise_std, size=x.shape) if noise_std > 0 else x
    perm = rng.permutation(n_samples)
    return TabularDataset(x[perm], y[perm], name)


def _split_sizes(n, fractions):
    raw = np.asarray(fractions, dtype=np.float64) * n
    sizes = np.floor(raw).astype(int)
    # hand leftovers to the largest remainders
    for i in np.argsort(-(raw - sizes), kind="stable")[: n - sizes.sum()]:
        sizes[i] += 1
    return sizes


def _stratified_sizes(class_counts, fractions, targets):
    """Per-class split sizes: floors of the quotas, then largest remainders
    first, never overshooting the overall split sizes."""
    quotas = np.outer(class_counts, fractions)
    alloc = np.floor(quotas).astype(int)
    left = np.asarray(class_counts) - alloc.sum(axis=1)
    deficit = np.asarray(targets) - alloc.sum(axis=0)
    rem = quotas - alloc
    for flat in np.argsort(-rem, axis=None, kind="stable"):
        c, j = np.unravel_index(flat, rem.shape)
        if left[c] > 0 and deficit[j] > 0:
            alloc[c, j] += 1
            left[c] -= 1
            deficit[j] -= 1
    return alloc


def split(dataset: TabularDataset, fractions=DEFAULT_FRACTIONS, stratified=True, seed=0):
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f < 0 for f in fractions):
        raise ParameterError("need three non-negative fractions (train, val, test)")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ParameterError(f"fractions must sum to 1, got {sum(fractions)}")
    rng = np.random.default_rng(seed)
    n = len(dataset)
    targets = _split_sizes(n, fractions)
    if not stratified:
        perm = rng.permutation(n)
        a, b = targets[0], targets[0] + targets[1]
        parts = [perm[:a], perm[a:b], perm[b:]]
    else:
        classes = np.unique(dataset.labels)
        members = [np.flatnonzero(dataset.labels == c) for c in classes]
        alloc = _stratified_sizes([len(m) for m in members], fractions, targets)
        parts = [[], [], []]
        for idx, sizes in zip(members, alloc):
            idx = rng.permutation(idx)
            cuts = np.cumsum(sizes)[:-1]
            for part, chunk in zip(parts, np.split(idx, cuts)):
                part.append(chunk)
        parts = [np.sort(np.concatenate(p)) for p in parts]
    return SplitSpec(*[np.asarray(p, dtype=np.int64) for p in parts], stratified, seed, fractions)


def standardization(features: np.ndarray):
    """Mean and std of ``features``; a zero std is replaced by 1."""
    mean = features.mean(axis=0)
    std = features.std(axis=0)
    return mean, np.where(std > 0, std, 1.0)


def write_csv(dataset: TabularDataset, path):
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{i + 1}" for i in range(dataset.features.shape[1])] + ["label"])
        for row, label in zip(dataset.features, dataset.labels):
            w.writerow([repr(float(v)) for v in row] + [int(label)])


def read_csv(path, name: str = "") -> TabularDataset:
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][-1] != "label":
        raise ParameterError(f"{path}: expected a header ending in 'label'")
    body = rows[1:]
    x = np.array([[float(v) for v in r[:-1]] for r in body], dtype=np.float64)
    y = np.array([int(r[-1]) for r in body], dtype=np.int64)
    if not body:
        x = x.reshape(0, len(rows[0]) - 1)
    return TabularDataset(x, y, name or path.stem)


def write_split(spec: SplitSpec, path):
    Path(path).write_text(json.dumps(spec.to_json()) + "\n")


def read_split(path) -> SplitSpec:
    return SplitSpec.from_json(json.loads(Path(path).read_text()))
