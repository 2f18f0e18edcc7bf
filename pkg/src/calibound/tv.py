"""Bounded-variation pathway: exact 1-D TV denoising and its certified CE bound.

The surrogate is the fused-lasso fit of the labels ordered by score,

    argmin_v  1/(2n) ||y - v||^2 + lam * sum_i |v_{i+1} - v_i|,

extended to all of [0, 1] by taking the value of the nearest training score on
the left. For labels in [0, 1] the unconstrained minimiser already lies in
[min y, max y], so no box constraint is enforced during the solve.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .concentration import bernstein_bound, dkw_bound, empirical_variance
from .core import BoundReport, DeltaBudget, ScoredDataset, check_scores_labels

__all__ = [
    "TvFit",
    "StepSurrogate",
    "TVSurrogate",
    "tv_lambda",
    "tv_threshold_t1",
    "tv_threshold_t2",
    "tv_denoise",
    "tv_objective",
    "tv_kkt_residual",
    "tvb",
    "ptb",
    "eval_step",
    "fit_step_surrogate",
    "tv_residuals",
    "certify_tv",
]


def tv_threshold_t1(delta: float) -> float:
    """Noise-mean threshold ``sqrt(ln(4/delta) / 2)``."""
    return math.sqrt(0.5 * math.log(4.0 / delta))


def tv_threshold_t2(n_train: int, delta: float) -> float:
    """Max-row noise threshold ``sqrt(n/8 * ln(4(n-1)/delta))``."""
    return math.sqrt(n_train / 8.0 * math.log(4.0 * (n_train - 1) / delta))


def _check_tv_args(n_train: int, delta: float) -> None:
    if n_train < 2:
        raise ValueError(f"TV bounds need at least 2 training points, got {n_train}")
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")


def tv_lambda(n_train: int, delta1: float) -> float:
    """Regularisation weight ``sqrt(ln(4(n-1)/delta1) / (8n))`` (equals t2/n).

    Defined for any ``delta1 > 0`` with ``4(n-1) > delta1``; the certified
    bounds themselves still require ``delta1 < 1``.
    """
    if n_train < 2:
        raise ValueError(f"TV bounds need at least 2 training points, got {n_train}")
    if not 0.0 < delta1 < 4.0 * (n_train - 1):
        raise ValueError(f"delta1 must lie in (0, 4(n-1)), got {delta1}")
    return math.sqrt(math.log(4.0 * (n_train - 1) / delta1) / (8.0 * n_train))


def tvb(n_train: int, delta: float, V: float) -> float:
    """Bound on the mean absolute reconstruction error on the training scores."""
    _check_tv_args(n_train, delta)
    if V < 0:
        raise ValueError(f"V must be >= 0, got {V}")
    t1 = tv_threshold_t1(delta)
    t2 = tv_threshold_t2(n_train, delta)
    inner = 2.0 * t1 * t1 + 2.0 * t1 * math.sqrt(t1 * t1 + 4.0 * t2 * V) + 4.0 * t2 * V
    return math.sqrt(inner / n_train)


def ptb(V: float, V_hat: float, n_train: int, delta2: float, delta3: float) -> float:
    """Population transfer term ``(V + V_hat) * dkw(n, d2) + dkw(n, d3)``."""
    if V < 0 or V_hat < 0:
        raise ValueError("total variations must be non-negative")
    return (V + V_hat) * dkw_bound(n_train, delta2) + dkw_bound(n_train, delta3)


@njit(cache=True)
def _condat_tv1d(y, mu):  # pragma: no cover - compiled
    # Condat (2013), direct algorithm for argmin 0.5||y-x||^2 + mu*||Dx||_1
    n = y.shape[0]
    x = np.empty(n)
    if n == 0:
        return x
    if mu <= 0.0:
        for i in range(n):
            x[i] = y[i]
        return x
    k = 0
    k0 = 0
    kplus = 0
    kminus = 0
    umin = mu
    umax = -mu
    vmin = y[0] - mu
    vmax = y[0] + mu
    twomu = 2.0 * mu
    while True:
        while k == n - 1:
            if umin < 0.0:
                while True:
                    x[k0] = vmin
                    k0 += 1
                    if k0 > kminus:
                        break
                k = k0
                kminus = k0
                vmin = y[k0]
                umin = mu
                umax = vmin + umin - vmax
            elif umax > 0.0:
                while True:
                    x[k0] = vmax
                    k0 += 1
                    if k0 > kplus:
                        break
                k = k0
                kplus = k0
                vmax = y[k0]
                umax = -mu
                umin = vmax + umax - vmin
            else:
                vmin += umin / (k - k0 + 1)
                while True:
                    x[k0] = vmin
                    k0 += 1
                    if k0 > k:
                        break
                return x
        umin += y[k + 1] - vmin
        if umin < -mu:
            while True:
                x[k0] = vmin
                k0 += 1
                if k0 > kminus:
                    break
            k = k0
            kminus = k0
            kplus = k0
            vmin = y[k0]
            vmax = vmin + twomu
            umin = mu
            umax = -mu
        else:
            umax += y[k + 1] - vmax
            if umax > mu:
                while True:
                    x[k0] = vmax
                    k0 += 1
                    if k0 > kplus:
                        break
                k = k0
                kminus = k0
                kplus = k0
                vmax = y[k0]
                vmin = vmax - twomu
                umin = mu
                umax = -mu
            else:
                k += 1
                if umin >= mu:
                    kminus = k
                    vmin += (umin - mu) / (kminus - k0 + 1)
                    umin = mu
                if umax <= -mu:
                    kplus = k
                    vmax += (umax + mu) / (kplus - k0 + 1)
                    umax = -mu


def _segments(values: np.ndarray) -> tuple[tuple[int, int, float], ...]:
    if values.size == 0:
        return ()
    change = np.flatnonzero(values[1:] != values[:-1]) + 1
    starts = np.concatenate(([0], change))
    ends = np.concatenate((change - 1, [values.size - 1]))
    return tuple((int(a), int(b), float(values[a])) for a, b in zip(starts, ends))


@dataclass(frozen=True)
class TvFit:
    """Fused-lasso fit over labels sorted by score."""

    sorted_scores: np.ndarray
    values: np.ndarray
    lam: float
    segments: tuple[tuple[int, int, float], ...] = field(repr=False)


def tv_objective(y, v, lam: float) -> float:
    """``1/(2n) ||y - v||^2 + lam * ||Dv||_1``."""
    y = np.asarray(y, dtype=float)
    v = np.asarray(v, dtype=float)
    return 0.5 * np.sum((y - v) ** 2) / y.size + lam * np.sum(np.abs(np.diff(v)))


def tv_kkt_residual(y, v, lam: float, jump_tol: float = 1e-12) -> float:
    """Largest violation of the subgradient optimality conditions.

    With ``mu = n * lam`` and dual ``z_k = sum_{i<=k} (v_i - y_i)``, optimality
    requires ``|z_k| <= mu``, ``z_k = mu * sign(v_{k+1} - v_k)`` wherever the
    fit jumps, and ``z_n = 0``. Differences below ``jump_tol`` count as flat:
    the direct solver can emit adjacent runs equal up to rounding.
    """
    y = np.asarray(y, dtype=float)
    v = np.asarray(v, dtype=float)
    mu = lam * y.size
    z = np.cumsum(v - y)
    resid = abs(z[-1])
    if y.size > 1:
        zk = z[:-1]
        dv = np.diff(v)
        jumps = np.where(np.abs(dv) > jump_tol, np.sign(dv), 0.0)
        box = np.maximum(np.abs(zk) - mu, 0.0)
        on_jump = np.where(jumps != 0, np.abs(zk - mu * jumps), 0.0)
        resid = max(resid, float(box.max()), float(on_jump.max()))
    return float(resid)


def tv_denoise(y, lam: float) -> TvFit:
    """Exact minimiser of ``1/(2n)||y - v||^2 + lam ||Dv||_1`` for ordered ``y``.

    ``y`` is assumed already sorted by score; the returned fit keeps that order
    (``sorted_scores`` is left empty here and filled by callers that know the
    scores).
    """
    y = np.ascontiguousarray(y, dtype=float)
    if y.ndim != 1 or y.size == 0:
        raise ValueError("tv_denoise needs a non-empty 1-D label vector")
    if y.min() < 0.0 or y.max() > 1.0:
        raise ValueError("labels must lie in [0, 1]")
    if lam < 0:
        raise ValueError(f"lam must be >= 0, got {lam}")
    v = _condat_tv1d(y, lam * y.size)
    # prox of TV preserves the data range; guard against rounding drift only
    lo, hi = y.min(), y.max()
    assert v.min() >= lo - 1e-9 and v.max() <= hi + 1e-9, "TV fit left the data range"
    np.clip(v, lo, hi, out=v)
    return TvFit(sorted_scores=np.empty(0), values=v, lam=float(lam), segments=_segments(v))


@dataclass(frozen=True)
class StepSurrogate:
    """Piecewise-constant calibration surrogate indexed by sorted training scores."""

    breakpoints: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        if self.breakpoints.size == 0 or self.breakpoints.size != self.values.size:
            raise ValueError("StepSurrogate needs matching, non-empty breakpoints and values")

    @property
    def total_variation_hat(self) -> float:
        return float(math.fsum(np.abs(np.diff(self.values))))

    def __call__(self, s) -> np.ndarray:
        return eval_step(self, s)


def eval_step(surrogate: StepSurrogate, s):
    """Value of the right-most breakpoint at or left of ``s``.

    Queries below the smallest breakpoint take the first value.
    """
    q = np.asarray(s, dtype=float)
    idx = np.searchsorted(surrogate.breakpoints, q, side="right") - 1
    out = surrogate.values[np.maximum(idx, 0)]
    return float(out) if q.ndim == 0 else out


def fit_step_surrogate(train: ScoredDataset, lam: float) -> tuple[StepSurrogate, TvFit]:
    """Sort by score (stable), denoise, and wrap as a step function."""
    order = np.argsort(train.scores, kind="stable")
    s_sorted = train.scores[order]
    fit = tv_denoise(train.labels[order].astype(float), lam)
    fit = TvFit(sorted_scores=s_sorted, values=fit.values, lam=fit.lam, segments=fit.segments)
    return StepSurrogate(breakpoints=s_sorted, values=fit.values), fit


def tv_residuals(surrogate: StepSurrogate, valid: ScoredDataset) -> np.ndarray:
    """Per-point ``|s_i - eta_hat(s_i)|`` on held-out scores."""
    return np.abs(valid.scores - eval_step(surrogate, valid.scores))


def certify_tv(
    train: ScoredDataset,
    valid: ScoredDataset,
    V: float = 1.0,
    budget: DeltaBudget | float = 0.05,
    seed: int | None = None,
) -> BoundReport:
    """Certified CE upper bound under a total-variation budget ``V``.

    ``budget`` is a four-part :class:`DeltaBudget` (reconstruction, DKW,
    Hoeffding, Bernstein) or a total delta split equally.
    """
    if not isinstance(budget, DeltaBudget):
        budget = DeltaBudget.equal(float(budget), 4)
    if len(budget) != 4:
        raise ValueError("TV certification needs a 4-part delta budget")
    n_t, n_v = len(train), len(valid)
    lam = tv_lambda(n_t, budget[1])
    surrogate, fit = fit_step_surrogate(train, lam)
    resid = tv_residuals(surrogate, valid)
    v_hat = surrogate.total_variation_hat
    below = int(np.count_nonzero(valid.scores < surrogate.breakpoints[0]))
    terms = {
        "empirical": math.fsum(resid) / n_v,
        "bernstein": bernstein_bound(n_v, budget[4], empirical_variance(resid)),
        "tvb": tvb(n_t, budget[1], V),
        "ptb": ptb(V, v_hat, n_t, budget[2], budget[3]),
    }
    diagnostics = {
        "V": float(V),
        "V_hat": v_hat,
        "lambda": lam,
        "segments": len(fit.segments),
        "below_first_breakpoint": below,
        "delta_parts": list(budget.parts),
    }
    flags = ("left_extrapolation",) if below else ()
    return BoundReport(
        method="tv", n_train=n_t, n_valid=n_v, delta=budget.total,
        terms=terms, diagnostics=diagnostics, seed=seed, flags=flags,
    )


class TVSurrogate(RegressorMixin, BaseEstimator):
    """Fused-lasso calibration surrogate with the sklearn fit/predict API.

    Parameters
    ----------
    lam : float, optional
        Regularisation weight. When ``None`` it is set from ``delta`` and the
        training size via :func:`tv_lambda`.
    delta : float, default=0.0125
        Failure probability used to derive ``lam``.
    """

    def __init__(self, lam: float | None = None, delta: float = 0.0125):
        self.lam = lam
        self.delta = delta

    def fit(self, scores, labels):
        s, y = check_scores_labels(scores, labels)
        if s.size < 2:
            raise ValueError("TVSurrogate needs at least 2 training points")
        lam = self.lam if self.lam is not None else tv_lambda(s.size, self.delta)
        self.step_, self.fit_ = fit_step_surrogate(ScoredDataset(s, y), lam)
        self.lambda_ = lam
        self.total_variation_ = self.step_.total_variation_hat
        return self

    def predict(self, scores):
        check_is_fitted(self, "step_")
        s, _ = check_scores_labels(scores)
        return eval_step(self.step_, s)
