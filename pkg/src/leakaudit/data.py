"""Tabular dataset ingestion, validation, deduplication and splitting.

The on-disk format is a header-bearing UTF-8 CSV with columns
``id,label[,meta_*...],f_0..f_{d-1}``. Labels are binary. Exact duplicate
feature vectors with the same label collapse to one record; identical
feature vectors with conflicting labels are all removed.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "IngestError",
    "SampleRecord",
    "Dataset",
    "SplitAssignment",
    "IngestReport",
    "CsvSchema",
    "ingest_dataset",
    "load_dataset",
    "save_dataset",
    "split_dataset",
    "class_weights",
]

log = logging.getLogger(__name__)


class IngestError(ValueError):
    """Raised for malformed input files or invalid records."""


@dataclass(frozen=True)
class CsvSchema:
    """Column naming convention for dataset CSV files."""

    id_column: str = "id"
    label_column: str = "label"
    meta_prefix: str = "meta_"


@dataclass(frozen=True)
class SampleRecord:
    """One labeled feature vector with a stable id and opaque metadata."""

    id: str
    label: int
    features: np.ndarray
    metadata: Mapping[str, float] | None = None

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=float)
        feats.setflags(write=False)
        object.__setattr__(self, "features", feats)
        if self.label not in (0, 1):
            raise IngestError(f"sample {self.id!r}: label must be 0 or 1, got {self.label}")
        if not np.all(np.isfinite(feats)):
            raise IngestError(f"sample {self.id!r}: non-finite feature value")


@dataclass(frozen=True)
class IngestReport:
    """Counts of records removed during cleaning."""

    n_read: int = 0
    n_exact_duplicates_removed: int = 0
    n_conflicting_removed: int = 0


class Dataset:
    """Immutable ordered collection of validated samples.

    Enforces unique ids and a uniform feature dimension. Deduplication is
    the loader's job; the constructor only refuses duplicate ids and
    dimension mismatches.
    """

    def __init__(self, samples: Sequence[SampleRecord]):
        samples = tuple(samples)
        if not samples:
            raise IngestError("dataset must contain at least one sample")
        dim = samples[0].features.shape[0]
        seen: dict[str, int] = {}
        for i, rec in enumerate(samples):
            if rec.features.shape != (dim,):
                raise IngestError(
                    f"sample {rec.id!r}: expected {dim} features, got {rec.features.shape[0]}"
                )
            if rec.id in seen:
                raise IngestError(f"duplicate id {rec.id!r}")
            seen[rec.id] = i
        self._samples = samples
        self._dim = int(dim)
        self._index = seen

    @property
    def samples(self) -> tuple[SampleRecord, ...]:
        return self._samples

    @property
    def dimension(self) -> int:
        return self._dim

    @property
    def class_counts(self) -> tuple[int, int]:
        n1 = sum(rec.label for rec in self._samples)
        return (len(self._samples) - n1, n1)

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(rec.id for rec in self._samples)

    def __len__(self) -> int:
        return len(self._samples)

    def __getitem__(self, sample_id: str) -> SampleRecord:
        return self._samples[self._index[sample_id]]

    def __contains__(self, sample_id: str) -> bool:
        return sample_id in self._index

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        if len(self) != len(other):
            return False
        for a, b in zip(self._samples, other._samples):
            if a.id != b.id or a.label != b.label:
                return False
            if not np.array_equal(a.features, b.features):
                return False
            if (a.metadata or {}) != (b.metadata or {}):
                return False
        return True

    def subset(self, ids: Iterable[str]) -> "Dataset":
        """Sub-dataset restricted to ``ids``, preserving this dataset's order."""
        wanted = set(ids)
        return Dataset([rec for rec in self._samples if rec.id in wanted])

    def features_array(self) -> np.ndarray:
        return np.stack([rec.features for rec in self._samples])

    def labels_array(self) -> np.ndarray:
        return np.array([rec.label for rec in self._samples], dtype=int)


@dataclass(frozen=True)
class SplitAssignment:
    """Disjoint train/validation/population id partition, seeded."""

    train_ids: tuple[str, ...]
    validation_ids: tuple[str, ...]
    population_ids: tuple[str, ...]
    seed: int

    def __post_init__(self):
        groups = (set(self.train_ids), set(self.validation_ids), set(self.population_ids))
        total = sum(len(g) for g in groups)
        if len(groups[0] | groups[1] | groups[2]) != total:
            raise ValueError("split groups must be pairwise disjoint")


def _parse_header(header: Sequence[str], schema: CsvSchema) -> tuple[list[str], list[str]]:
    if len(header) < 3 or header[0] != schema.id_column or header[1] != schema.label_column:
        raise IngestError(
            f"header must start with {schema.id_column!r},{schema.label_column!r}, got {header[:2]}"
        )
    meta_cols: list[str] = []
    i = 2
    while i < len(header) and header[i].startswith(schema.meta_prefix):
        meta_cols.append(header[i])
        i += 1
    feature_cols = list(header[i:])
    if not feature_cols:
        raise IngestError("no feature columns found")
    return meta_cols, feature_cols


def ingest_dataset(path: str | Path, schema: CsvSchema | None = None) -> tuple[Dataset, IngestReport]:
    """Read, validate and deduplicate a CSV dataset.

    Returns the cleaned dataset together with removal counts. Raises
    :class:`IngestError` naming the offending row for malformed input.
    """
    schema = schema or CsvSchema()
    path = Path(path)
    if not path.exists():
        raise IngestError(f"no such file: {path}")

    records: list[SampleRecord] = []
    seen_ids: set[str] = set()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestError(f"{path}: empty file") from None
        meta_cols, feature_cols = _parse_header(header, schema)
        n_cols = len(header)
        for row_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != n_cols:
                raise IngestError(f"{path}: row {row_no}: expected {n_cols} columns, got {len(row)}")
            sample_id = row[0]
            if sample_id in seen_ids:
                raise IngestError(f"{path}: row {row_no}: duplicate id {sample_id!r}")
            try:
                label = int(row[1])
            except ValueError:
                raise IngestError(f"{path}: row {row_no}: non-integer label {row[1]!r}") from None
            if label not in (0, 1):
                raise IngestError(f"{path}: row {row_no}: label must be 0 or 1, got {label}")
            try:
                meta = {
                    col[len(schema.meta_prefix):]: float(row[2 + j])
                    for j, col in enumerate(meta_cols)
                }
                feats = np.array([float(v) for v in row[2 + len(meta_cols):]], dtype=float)
            except ValueError:
                raise IngestError(f"{path}: row {row_no}: non-numeric value") from None
            if not np.all(np.isfinite(feats)):
                raise IngestError(f"{path}: row {row_no}: non-finite feature value")
            seen_ids.add(sample_id)
            records.append(SampleRecord(sample_id, label, feats, meta or None))

    n_read = len(records)
    cleaned, n_dup, n_conflict = _deduplicate(records)
    if not cleaned:
        raise IngestError(f"{path}: no samples remain after cleaning")
    report = IngestReport(n_read=n_read, n_exact_duplicates_removed=n_dup, n_conflicting_removed=n_conflict)
    if n_dup or n_conflict:
        log.info(
            "cleaned %s: removed %d exact duplicates, %d conflicting-label records",
            path, n_dup, n_conflict,
        )
    return Dataset(cleaned), report


def _deduplicate(records: list[SampleRecord]) -> tuple[list[SampleRecord], int, int]:
    groups: dict[bytes, list[SampleRecord]] = {}
    for rec in records:
        groups.setdefault(rec.features.tobytes(), []).append(rec)
    keep_ids: set[str] = set()
    n_dup = 0
    n_conflict = 0
    for group in groups.values():
        labels = {rec.label for rec in group}
        if len(labels) > 1:
            n_conflict += len(group)
        else:
            keep_ids.add(group[0].id)
            n_dup += len(group) - 1
    return [rec for rec in records if rec.id in keep_ids], n_dup, n_conflict


def load_dataset(path: str | Path, schema: CsvSchema | None = None) -> Dataset:
    """Load and clean a CSV dataset (see :func:`ingest_dataset`)."""
    dataset, _ = ingest_dataset(path, schema)
    return dataset


def save_dataset(dataset: Dataset, path: str | Path, schema: CsvSchema | None = None) -> None:
    """Serialize a dataset to CSV; byte-stable for a fixed dataset."""
    schema = schema or CsvSchema()
    meta_keys = sorted({k for rec in dataset.samples for k in (rec.metadata or {})})
    header = [schema.id_column, schema.label_column]
    header += [schema.meta_prefix + k for k in meta_keys]
    header += [f"f_{j}" for j in range(dataset.dimension)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for rec in dataset.samples:
            meta = rec.metadata or {}
            row = [rec.id, str(rec.label)]
            row += [repr(float(meta[k])) for k in meta_keys]
            row += [repr(float(v)) for v in rec.features]
            writer.writerow(row)


def split_dataset(
    dataset: Dataset,
    fractions: tuple[float, float, float],
    seed: int,
) -> SplitAssignment:
    """Uniformly random train/validation/population partition.

    Train and validation sizes are floored; the remainder goes to the
    population split. Deterministic under ``seed``.
    """
    f_train, f_val, f_pop = fractions
    if min(fractions) < 0:
        raise ValueError(f"fractions must be non-negative, got {fractions}")
    if abs(f_train + f_val + f_pop - 1.0) > 1e-9:
        raise ValueError(f"fractions must sum to 1, got {fractions}")

    n = len(dataset)
    n_train = math.floor(f_train * n)
    n_val = math.floor(f_val * n)
    for name, count, frac in (("train", n_train, f_train), ("validation", n_val, f_val),
                              ("population", n - n_train - n_val, f_pop)):
        if frac > 0 and count == 0:
            raise ValueError(f"{name} split is empty for fraction {frac} with {n} samples")

    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    ids = dataset.ids
    order = [ids[i] for i in perm]
    return SplitAssignment(
        train_ids=tuple(order[:n_train]),
        validation_ids=tuple(order[n_train:n_train + n_val]),
        population_ids=tuple(order[n_train + n_val:]),
        seed=seed,
    )


def class_weights(labels: Dataset | Iterable[int]) -> tuple[float, float]:
    """Inverse-frequency class weights w_c = n / (2 * n_c).

    The weighted class masses balance exactly: w_0*n_0 == w_1*n_1.
    """
    if isinstance(labels, Dataset):
        n0, n1 = labels.class_counts
    else:
        lab = list(labels)
        n1 = sum(1 for y in lab if y == 1)
        n0 = len(lab) - n1
    if n0 == 0 or n1 == 0:
        raise ValueError("class weights undefined: both classes must be present")
    n = n0 + n1
    return (n / (2.0 * n0), n / (2.0 * n1))
