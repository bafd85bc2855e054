"""Feature tables, synthetic fine-grained data and balanced batch sampling.

File format: UTF-8 CSV with header ``id,label,f0,...,f{D-1}``; labels are
non-negative integers. An optional sidecar split file lists the held-out test
class ids, one per line. Classes not listed there form the training split.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import InsufficientClasses, ParseError, ValidationError
from .numerics import normalize_rows


@dataclass
class DatasetTable:
    features: np.ndarray
    labels: np.ndarray
    ids: list[str]
    test_classes: frozenset[int] = field(default_factory=frozenset)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.ids = [str(i) for i in self.ids]
        self.test_classes = frozenset(int(c) for c in self.test_classes)
        n = len(self.labels)
        if self.features.ndim != 2 or self.features.shape[0] != n or len(self.ids) != n:
            raise ValidationError("features, labels and ids must have matching lengths")
        if n < 2:
            raise ValidationError("a table needs at least 2 rows")
        if not np.all(np.isfinite(self.features)):
            raise ValidationError("features contain NaN or Inf")
        if np.any(self.labels < 0):
            raise ValidationError("labels must be non-negative")
        if self.train_classes & self.test_classes:
            raise ValidationError("train and test class sets overlap")

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def classes(self) -> frozenset[int]:
        return frozenset(int(c) for c in np.unique(self.labels))

    @property
    def train_classes(self) -> frozenset[int]:
        return self.classes - self.test_classes

    def _subset(self, mask: np.ndarray) -> "DatasetTable":
        return DatasetTable(self.features[mask], self.labels[mask], [i for i, k in zip(self.ids, mask) if k])

    def train(self) -> "DatasetTable":
        return self._subset(~np.isin(self.labels, sorted(self.test_classes)))

    def test(self) -> "DatasetTable":
        if not self.test_classes:
            raise ValidationError("table has no test split")
        return self._subset(np.isin(self.labels, sorted(self.test_classes)))

    def check_train_split(self) -> None:
        train = self.train()
        _, counts = np.unique(train.labels, return_counts=True)
        if np.any(counts < 2):
            bad = sorted(int(c) for c, k in zip(np.unique(train.labels), counts) if k < 2)
            raise ValidationError(f"training classes with a single sample: {bad}")


def generate_synthetic(
    n_classes: int,
    samples_per_class: int,
    dim: int,
    intra_scale: float,
    seed: int,
    n_test_classes: int | None = None,
    noise: float = 0.15,
    nuisance: float = 0.0,
) -> DatasetTable:
    """Clustered unit vectors with graded, ranked intra-class variation.

    Each class has a random unit mean and two semantic directions. The
    directions are drawn from a low-dimensional subspace shared by all
    classes (think pose or viewpoint), so a model can learn nuisance
    structure that transfers to unseen classes. Sample ``s`` of a class is
    displaced along the first direction by a graded magnitude proportional to
    ``s / (samples_per_class - 1)`` and along the second by a random amount.
    On top of that come isotropic noise (``noise``) and a random jitter inside
    the shared subspace (``nuisance``). All displacements scale with
    ``intra_scale``.

    The last ``n_test_classes`` classes (default a third) form the test split.
    """
    if min(n_classes, samples_per_class) < 1 or dim < 2:
        raise ValueError("counts must be >= 1 and dim >= 2")
    rng = np.random.default_rng(seed)
    n_shared = max(2, dim // 4)
    shared, _ = np.linalg.qr(rng.standard_normal((dim, n_shared)))  # dim x n_shared
    means, _ = normalize_rows(rng.standard_normal((n_classes, dim)))
    grade = np.linspace(0.0, 1.0, samples_per_class) if samples_per_class > 1 else np.zeros(1)

    feats, labels, ids = [], [], []
    for c in range(n_classes):
        dirs, _ = normalize_rows(rng.standard_normal((2, n_shared)) @ shared.T)
        second = rng.uniform(-0.5, 0.5, samples_per_class)
        iso = rng.standard_normal((samples_per_class, dim)) * noise / math.sqrt(dim)
        shared_jitter = rng.standard_normal((samples_per_class, n_shared)) @ shared.T * nuisance / math.sqrt(n_shared)
        disp = grade[:, None] * dirs[0] + second[:, None] * dirs[1] + iso + shared_jitter
        x, _ = normalize_rows(means[c] + intra_scale * disp)
        feats.append(x)
        labels.extend([c] * samples_per_class)
        ids.extend(f"c{c}_s{s}" for s in range(samples_per_class))

    if n_test_classes is None:
        n_test_classes = n_classes // 3
    test = range(n_classes - n_test_classes, n_classes)
    return DatasetTable(np.vstack(feats), np.asarray(labels), ids, frozenset(test))


BUNDLED_SETTINGS = dict(
    n_classes=30, samples_per_class=24, dim=16, intra_scale=2.0, seed=7, n_test_classes=10, noise=0.15, nuisance=2.0
)
BUNDLED_DIR = Path(__file__).parent / "datasets"


def bundled_dataset() -> DatasetTable:
    """The shipped desk-scale dataset: 20 train and 10 unseen test classes, dim 16.

    Stored as CSV next to the package; :data:`BUNDLED_SETTINGS` regenerates it.
    """
    return load_table(BUNDLED_DIR / "bundled.csv", split_path=BUNDLED_DIR / "bundled_split.txt")


def save_table(table: DatasetTable, path, split_path=None) -> None:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["id", "label"] + [f"f{k}" for k in range(table.dim)])
        for ident, label, row in zip(table.ids, table.labels, table.features):
            writer.writerow([ident, int(label)] + [repr(float(v)) for v in row])
    if split_path is not None:
        Path(split_path).write_text("".join(f"{c}\n" for c in sorted(table.test_classes)), encoding="utf-8")


def _read_split(split_path) -> frozenset[int]:
    out = set()
    for n, line in enumerate(Path(split_path).read_text(encoding="utf-8").splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        try:
            out.add(int(line))
        except ValueError:
            raise ParseError(n, f"bad class id {line!r} in split file") from None
    return frozenset(out)


def load_table(path, format: str = "csv", split_path=None, require_train: bool = True) -> DatasetTable:
    """Parse and validate a feature file.

    Raises:
        ParseError: malformed header or row (carries the 1-based line number).
        ValidationError: non-finite features, singleton training classes, etc.
    """
    if format != "csv":
        raise ValueError(f"unsupported format {format!r}")
    ids, labels, rows = [], [], []
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ParseError(1, "empty file")
        if len(header) < 3 or header[:2] != ["id", "label"] or header[2:] != [f"f{k}" for k in range(len(header) - 2)]:
            raise ParseError(1, "header must be id,label,f0,...,f{D-1}")
        width = len(header)
        for line_no, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != width:
                raise ParseError(line_no, f"expected {width} columns, got {len(rec)}")
            try:
                label = int(rec[1])
            except ValueError:
                raise ParseError(line_no, f"label {rec[1]!r} is not an integer") from None
            if label < 0:
                raise ParseError(line_no, f"label {label} is negative")
            try:
                values = [float(v) for v in rec[2:]]
            except ValueError as exc:
                raise ParseError(line_no, str(exc)) from None
            if not all(math.isfinite(v) for v in values):
                raise ValidationError(f"line {line_no}: non-finite feature value")
            ids.append(rec[0])
            labels.append(label)
            rows.append(values)
    if not rows:
        raise ValidationError("file has no data rows")
    test = _read_split(split_path) if split_path is not None else frozenset()
    table = DatasetTable(np.asarray(rows), np.asarray(labels), ids, test)
    if require_train:
        table.check_train_split()
    return table


@dataclass
class BatchSpec:
    classes_per_batch: int
    samples_per_class: int
    seed: int = 0

    def __post_init__(self):
        if self.samples_per_class < 2:
            raise ValueError("samples_per_class must be >= 2 so every batch has positive pairs")
        if self.classes_per_batch < 1:
            raise ValueError("classes_per_batch must be >= 1")

    @property
    def batch_size(self) -> int:
        return self.classes_per_batch * self.samples_per_class


@dataclass
class EpochState:
    """Sampler RNG plus the queue of classes not yet drawn this pass."""

    rng: np.random.Generator
    classes: np.ndarray
    queue: list[int] = field(default_factory=list)

    @classmethod
    def start(cls, table: DatasetTable, spec: BatchSpec, epoch: int) -> "EpochState":
        return cls(np.random.default_rng([spec.seed, epoch]), np.unique(table.labels))


def sample_batch(table: DatasetTable, spec: BatchSpec, state: EpochState) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Draw ``P`` distinct classes and ``K`` samples of each.

    Returns ``(features, labels, row_indices)``. Classes come off a shuffled
    queue without replacement and the queue refills when it runs dry; within
    a class, rows are drawn without replacement unless the class is short.
    """
    p, k = spec.classes_per_batch, spec.samples_per_class
    if len(state.classes) < p:
        raise InsufficientClasses(f"need {p} classes per batch, table has {len(state.classes)}")
    chosen: list[int] = []
    while len(chosen) < p:
        if not state.queue:
            state.queue = [int(c) for c in state.rng.permutation(state.classes)]
        c = state.queue.pop(0)
        if c not in chosen:
            chosen.append(c)
        else:
            state.queue.append(c)
    idx = []
    for c in chosen:
        rows = np.flatnonzero(table.labels == c)
        idx.append(state.rng.choice(rows, size=k, replace=len(rows) < k))
    idx = np.concatenate(idx)
    return table.features[idx], table.labels[idx], idx


def iter_epoch(table: DatasetTable, spec: BatchSpec, epoch: int) -> Iterator[tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """All batches of one epoch; roughly one pass over the rows."""
    state = EpochState.start(table, spec, epoch)
    n_batches = max(1, len(table.labels) // spec.batch_size)
    for _ in range(n_batches):
        yield sample_batch(table, spec, state)
