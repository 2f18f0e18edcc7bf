"""Baselines: Lipschitz bucketing with shift aggregation, and the binned ECE heuristic.

Per bucket ``b`` of width ``w_b`` the CE contribution is bounded by::

    |mean_b(s - y)| + 2 * Bernstein(n_b, delta', var_b(z)) + (1 + L) * w_b

with ``z = (1 + s - y) / 2`` in [0, 1]. ``s - eta(s)`` moves by at most
``(1 + L) w_b`` inside a bucket when eta is L-Lipschitz (``w_b`` from the
identity, ``L w_b`` from eta). Bucket masses are replaced by their empirical
frequencies at the cost of an L1 multinomial deviation term.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .concentration import bernstein_bound
from .core import BoundReport, ScoredDataset, check_scores_labels

__all__ = [
    "BucketPartition",
    "BucketBound",
    "default_bucket_counts",
    "lipschitz_bucket_terms",
    "lipschitz_bucket_bound",
    "certify_lipschitz",
    "ece",
    "DEFAULT_SHIFTS",
    "DEFAULT_ECE_BINS",
]

DEFAULT_SHIFTS = 4
DEFAULT_ECE_BINS = 15


@dataclass(frozen=True)
class BucketPartition:
    """Equal-width buckets of width ``1/B`` offset by ``r / (shifts * B)``.

    An unshifted partition has ``B`` buckets. A shifted one has ``B + 1``
    because the outer buckets are clipped to [0, 1].
    """

    B: int
    r: int = 0
    shifts: int = 1

    def __post_init__(self):
        if self.B < 1:
            raise ValueError(f"bucket count must be >= 1, got {self.B}")
        if self.shifts < 1 or not 0 <= self.r < self.shifts:
            raise ValueError(f"shift index {self.r} outside 0..{self.shifts - 1}")

    @property
    def offset(self) -> float:
        return self.r / (self.shifts * self.B)

    @property
    def edges(self) -> np.ndarray:
        inner = self.offset + np.arange(self.B) / self.B
        inner = inner[(inner > 0.0) & (inner < 1.0)]
        return np.concatenate(([0.0], inner, [1.0]))

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.edges)

    def __len__(self) -> int:
        return self.edges.size - 1

    def assign(self, scores) -> np.ndarray:
        """Bucket index of each score; buckets are ``[e_k, e_{k+1})``, the last one closed."""
        return np.searchsorted(self.edges[1:-1], np.asarray(scores, dtype=float), side="right")


@dataclass(frozen=True)
class BucketBound:
    """Additive parts of one candidate's bound (``total = bucketed + multinomial``)."""

    partition: BucketPartition
    bucketed: float
    multinomial: float
    gap: float
    bernstein: float
    smoothness: float

    @property
    def total(self) -> float:
        return self.bucketed + self.multinomial


def _bucket_stats(sorted_scores, cum_d, cum_z, cum_z2, partition):
    n = sorted_scores.size
    cut = np.searchsorted(sorted_scores, partition.edges[1:-1], side="left")
    lo = np.concatenate(([0], cut))
    hi = np.concatenate((cut, [n]))
    counts = hi - lo
    sum_d = cum_d[hi] - cum_d[lo]
    sum_z = cum_z[hi] - cum_z[lo]
    sum_z2 = cum_z2[hi] - cum_z2[lo]
    return counts, sum_d, sum_z, sum_z2


def _prefix(values):
    out = np.zeros(values.size + 1)
    np.cumsum(values, out=out[1:])
    return out


class _BucketData:
    """Sorted scores with prefix sums so each candidate costs O(B log n)."""

    def __init__(self, scores, labels):
        s, y = check_scores_labels(scores, labels)
        order = np.argsort(s, kind="stable")
        self.s = s[order]
        d = self.s - y[order]
        z = 0.5 * (1.0 + d)
        self.n = s.size
        self.cum_d = _prefix(d)
        self.cum_z = _prefix(z)
        self.cum_z2 = _prefix(z * z)

    def terms(self, L: float, partition: BucketPartition, delta: float) -> BucketBound:
        counts, sum_d, sum_z, sum_z2 = _bucket_stats(
            self.s, self.cum_d, self.cum_z, self.cum_z2, partition)
        nb = len(partition)
        w = partition.widths
        per_bucket_delta = delta / (4.0 * nb)
        gap = np.zeros(nb)
        bern = np.zeros(nb)
        upper = np.ones(nb)
        for b in range(nb):
            m = int(counts[b])
            if m == 0:
                continue
            mean_z = sum_z[b] / m
            var_z = min(max(sum_z2[b] / m - mean_z * mean_z, 0.0), 0.25)
            gap[b] = abs(sum_d[b]) / m
            bern[b] = 2.0 * bernstein_bound(m, per_bucket_delta, var_z)
            upper[b] = min(1.0, gap[b] + bern[b] + (1.0 + L) * w[b])
        p_hat = counts / self.n
        multinomial = 0.5 * math.sqrt(
            2.0 * (nb * math.log(2.0) + math.log(2.0 / delta)) / self.n)
        return BucketBound(
            partition=partition,
            bucketed=math.fsum(p_hat * upper),
            multinomial=multinomial,
            gap=math.fsum(p_hat * gap),
            bernstein=math.fsum(p_hat * bern),
            smoothness=math.fsum(p_hat * (1.0 + L) * w),
        )


def lipschitz_bucket_terms(valid: ScoredDataset, L: float, partition: BucketPartition,
                           delta: float) -> BucketBound:
    """Breakdown of :func:`lipschitz_bucket_bound` for one partition."""
    if L < 0:
        raise ValueError(f"Lipschitz constant must be >= 0, got {L}")
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    return _BucketData(valid.scores, valid.labels).terms(L, partition, delta)


def lipschitz_bucket_bound(valid: ScoredDataset, L: float, partition: BucketPartition,
                           delta: float) -> float:
    """CE upper bound, valid with probability ``1 - delta``, for one bucket partition.

    ``sum_b p_hat_b * min(1, U_b) + 0.5 * sqrt(2 (B' ln 2 + ln(2/delta)) / n)``
    where ``U_b`` is the per-bucket bound in the module docstring evaluated at
    level ``delta / (4 B')`` and ``B'`` is the number of buckets. Empty buckets
    carry no empirical mass.
    """
    return lipschitz_bucket_terms(valid, L, partition, delta).total


def default_bucket_counts(n: int) -> tuple[int, ...]:
    """Powers of two from 2 to 2^14, capped at ``n / 20`` (``(1,)`` for tiny n)."""
    counts = tuple(2**k for k in range(1, 15) if 2**k <= n / 20)
    return counts or (1,)


def certify_lipschitz(
    valid: ScoredDataset,
    L: float,
    bucket_counts: Iterable[int] | None = None,
    shift_count: int = DEFAULT_SHIFTS,
    delta: float = 0.05,
    seed: int | None = None,
) -> BoundReport:
    """Minimum bound over all (B, r) candidates, each at level ``delta / (#B * shifts)``.

    Ties are broken towards the smaller ``B`` and then the smaller ``r``.
    """
    if L < 0:
        raise ValueError(f"Lipschitz constant must be >= 0, got {L}")
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    if shift_count < 1:
        raise ValueError("shift_count must be >= 1")
    counts = sorted(set(default_bucket_counts(len(valid)) if bucket_counts is None
                        else (int(b) for b in bucket_counts)))
    if not counts:
        raise ValueError("empty bucket-count candidate set")
    level = delta / (len(counts) * shift_count)
    data = _BucketData(valid.scores, valid.labels)
    best: BucketBound | None = None
    for B in counts:
        for r in range(shift_count):
            cand = data.terms(L, BucketPartition(B, r, shift_count), level)
            if best is None or cand.total < best.total:
                best = cand
    return BoundReport(
        method="lipschitz",
        n_train=0,
        n_valid=len(valid),
        delta=delta,
        terms={"bucketed": best.bucketed, "multinomial": best.multinomial},
        diagnostics={
            "L": L,
            "B": best.partition.B,
            "r": best.partition.r,
            "shift_count": shift_count,
            "bucket_counts": counts,
            "candidate_delta": level,
            "gap": best.gap,
            "bernstein": best.bernstein,
            "smoothness": best.smoothness,
        },
        seed=seed,
    )


def ece(scores, labels, B: int = DEFAULT_ECE_BINS) -> float:
    """Binned expected calibration error over ``B`` equal-width bins (uncertified).

    Bins are ``[k/B, (k+1)/B)`` with the last one closed.
    """
    if B < 1:
        raise ValueError(f"bin count must be >= 1, got {B}")
    s, y = check_scores_labels(scores, labels)
    idx = np.minimum((s * B).astype(np.int64), B - 1)
    diff = np.bincount(idx, weights=s - y, minlength=B)
    return float(min(1.0, math.fsum(np.abs(diff)) / s.size))
