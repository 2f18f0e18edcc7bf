"""Data model shared by every certifier: datasets, splits, delta budgets, reports."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import IO, Iterable, Sequence

import numpy as np
from sklearn.utils.validation import check_consistent_length, column_or_1d

__all__ = [
    "DataValidationError",
    "ScoredDataset",
    "SplitPlan",
    "DeltaBudget",
    "BoundReport",
    "check_scores_labels",
    "load_dataset",
    "dump_dataset",
    "make_split_plan",
    "subsample_validation",
    "subsample_size",
    "derive_rng",
]


class DataValidationError(ValueError):
    """Raised when input scores/labels violate the dataset contract."""


def check_scores_labels(scores, labels=None) -> tuple[np.ndarray, np.ndarray | None]:
    """Validate and coerce a score vector (and optional label vector).

    Scores must be finite reals in [0, 1]; labels must be 0/1. Returns
    float64 / int8 arrays.
    """
    s = column_or_1d(np.asarray(scores, dtype=float), warn=True)
    if s.size == 0:
        raise DataValidationError("empty score vector")
    if not np.all(np.isfinite(s)):
        raise DataValidationError("scores contain non-finite values")
    if s.min() < 0.0 or s.max() > 1.0:
        raise DataValidationError("scores must lie in [0, 1]")
    if labels is None:
        return s, None
    y_raw = column_or_1d(np.asarray(labels), warn=True)
    check_consistent_length(s, y_raw)
    if not np.all(np.isin(y_raw, (0, 1))):
        raise DataValidationError("labels must be 0 or 1")
    return s, y_raw.astype(np.int8)


@dataclass(frozen=True, eq=False)
class ScoredDataset:
    """Paired classifier scores in [0, 1] and binary labels."""

    scores: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        s, y = check_scores_labels(self.scores, self.labels)
        s.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "scores", s)
        object.__setattr__(self, "labels", y)

    def __len__(self) -> int:
        return self.scores.size

    def subset(self, idx) -> "ScoredDataset":
        idx = np.asarray(idx)
        return ScoredDataset(self.scores[idx], self.labels[idx])

    def __eq__(self, other) -> bool:
        if not isinstance(other, ScoredDataset):
            return NotImplemented
        return np.array_equal(self.scores, other.scores) and np.array_equal(
            self.labels, other.labels
        )

    __hash__ = None


def load_dataset(source: IO[str] | IO[bytes] | str) -> ScoredDataset:
    """Parse a ``score,label`` CSV into a :class:`ScoredDataset`.

    ``source`` may be a text/binary stream or the CSV text itself. Errors carry
    the 1-based line number of the offending row.
    """
    if isinstance(source, str):
        text = source
    else:
        raw = source.read()
        text = raw.decode("utf-8") if isinstance(raw, bytes) else raw
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise DataValidationError("empty file") from None
    if [h.strip() for h in header] != ["score", "label"]:
        raise DataValidationError(
            f"expected header 'score,label' at line 1, got {','.join(header)!r}"
        )
    scores: list[float] = []
    labels: list[int] = []
    for row in reader:
        line = reader.line_num
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 2:
            raise DataValidationError(f"expected 2 columns at line {line}, got {len(row)}")
        try:
            s = float(row[0])
            y = int(row[1])
        except ValueError:
            raise DataValidationError(f"malformed row at line {line}: {','.join(row)!r}") from None
        if not (0.0 <= s <= 1.0) or math.isnan(s):
            raise DataValidationError(f"score out of range at line {line}")
        if y not in (0, 1):
            raise DataValidationError(f"label not in {{0,1}} at line {line}")
        scores.append(s)
        labels.append(y)
    if not scores:
        raise DataValidationError("empty file")
    return ScoredDataset(np.array(scores), np.array(labels))


def dump_dataset(data: ScoredDataset, sink: IO[str]) -> None:
    """Write ``data`` as ``score,label`` CSV; scores use round-trip repr."""
    sink.write("score,label\n")
    for s, y in zip(data.scores.tolist(), data.labels.tolist()):
        sink.write(f"{s!r},{y}\n")


def derive_rng(seed: int, *keys: int) -> np.random.Generator:
    """Independent generator for a (seed, *keys) stream; no global RNG state."""
    return np.random.default_rng(np.random.SeedSequence([int(seed) & (2**64 - 1), *keys]))


@dataclass(frozen=True)
class SplitPlan:
    """K disjoint validation folds; each fold trains on the complement."""

    n: int
    seed: int
    valid_folds: tuple[np.ndarray, ...]

    @property
    def fold_count(self) -> int:
        return len(self.valid_folds)

    def valid(self, k: int) -> np.ndarray:
        return self.valid_folds[k]

    def train(self, k: int) -> np.ndarray:
        mask = np.ones(self.n, dtype=bool)
        mask[self.valid_folds[k]] = False
        return np.flatnonzero(mask)

    def folds(self) -> Iterable[tuple[np.ndarray, np.ndarray]]:
        for k in range(self.fold_count):
            yield self.train(k), self.valid(k)


def make_split_plan(n: int, K: int, seed: int) -> SplitPlan:
    """Random partition of ``range(n)`` into ``K`` folds of near-equal size."""
    if K < 2:
        raise ValueError(f"fold count must be >= 2, got {K}")
    if n < 2 * K:
        raise ValueError(f"need n >= 2K for a split plan, got n={n}, K={K}")
    perm = derive_rng(seed, 0x5917).permutation(n)
    folds = tuple(np.sort(part) for part in np.array_split(perm, K))
    for f in folds:
        f.setflags(write=False)
    return SplitPlan(n=n, seed=seed, valid_folds=folds)


def subsample_size(n_valid: int, n_total: int) -> int:
    """Held-out evaluation budget: ``min(|V|, min(15000, max(5000, floor(0.05 n))))``."""
    cap = min(15000, max(5000, int(math.floor(0.05 * n_total))))
    return min(n_valid, cap)


def subsample_validation(valid_indices, n_total: int, seed: int, fold: int = 0) -> np.ndarray:
    """Uniform subset (without replacement) of a validation fold, sorted.

    ``fold`` keys an independent stream so folds sharing a seed do not reuse draws.
    """
    valid_indices = np.asarray(valid_indices)
    if valid_indices.size == 0:
        raise ValueError("validation index set is empty")
    m = subsample_size(valid_indices.size, n_total)
    if m == valid_indices.size:
        return np.sort(valid_indices)
    picked = derive_rng(seed, 0x5AB5, fold).choice(valid_indices, size=m, replace=False)
    return np.sort(picked)


@dataclass(frozen=True)
class DeltaBudget:
    """Split of the total failure probability across sub-bounds."""

    total: float
    parts: tuple[float, ...]

    def __post_init__(self):
        if not 0.0 < self.total < 1.0:
            raise ValueError(f"delta must lie in (0, 1), got {self.total}")
        if not self.parts or any(p <= 0 for p in self.parts):
            raise ValueError("every delta part must be positive")
        if abs(sum(self.parts) - self.total) > 1e-12:
            raise ValueError(
                f"delta parts sum to {sum(self.parts)!r}, expected {self.total!r}"
            )

    @classmethod
    def equal(cls, total: float, k: int) -> "DeltaBudget":
        parts = [total / k] * k
        # absorb the rounding residue so the parts sum exactly
        parts[-1] = total - sum(parts[:-1])
        return cls(total, tuple(parts))

    @classmethod
    def from_weights(cls, total: float, weights: Sequence[float]) -> "DeltaBudget":
        w = np.asarray(weights, dtype=float)
        if w.ndim != 1 or np.any(w <= 0):
            raise ValueError("weights must be positive")
        parts = list(total * w / w.sum())
        parts[-1] = total - sum(parts[:-1])
        return cls(total, tuple(parts))

    def __getitem__(self, i: int) -> float:
        """1-based access matching the usual delta_1..delta_k naming."""
        if not 1 <= i <= len(self.parts):
            raise IndexError(i)
        return self.parts[i - 1]

    def __len__(self) -> int:
        return len(self.parts)


@dataclass(frozen=True)
class BoundReport:
    """Certified CE upper bound with its additive breakdown.

    ``terms`` holds only additive components, so ``raw_bound == sum(terms)``;
    ``bound`` is ``raw_bound`` clamped to [0, 1]. Non-additive quantities
    (bandwidths, total variation estimates, envelope constants, counts) go to
    ``diagnostics``.
    """

    method: str
    n_train: int
    n_valid: int
    delta: float
    terms: dict[str, float]
    diagnostics: dict = field(default_factory=dict)
    seed: int | None = None
    flags: tuple[str, ...] = ()

    def __post_init__(self):
        for name, v in self.terms.items():
            if not math.isfinite(v):
                raise ValueError(f"term {name!r} is not finite: {v}")

    @property
    def raw_bound(self) -> float:
        # fixed summation order keeps reports reproducible bit-for-bit
        return math.fsum(self.terms.values())

    @property
    def bound(self) -> float:
        return min(1.0, max(0.0, self.raw_bound))

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "n_train": int(self.n_train),
            "n_valid": int(self.n_valid),
            "delta": float(self.delta),
            "bound": self.bound,
            "raw_bound": self.raw_bound,
            "terms": {k: float(v) for k, v in self.terms.items()},
            "diagnostics": _jsonable(self.diagnostics),
            "seed": self.seed,
            "flags": list(self.flags),
        }


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj
