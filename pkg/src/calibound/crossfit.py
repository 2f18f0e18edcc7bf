"""K-fold cross-fitting around the surrogate-based certifiers.

Every validation point is scored by a surrogate fitted on the other folds.
Per-point residuals (and smoothing errors for NW) are pooled over folds and
the concentration terms are applied once, on the pooled sample, at the full
delta budget. Surrogate-quality terms that hold per fold (TVB and PTB for TV)
are union-bounded over folds and averaged with the pooled-sample weights.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from .bucketing import DEFAULT_SHIFTS, certify_lipschitz
from .concentration import bernstein_bound, empirical_variance
from .core import (
    BoundReport,
    DeltaBudget,
    ScoredDataset,
    make_split_plan,
    subsample_validation,
)
from .nw import NWSurrogate, _nw_report, nw_validation_terms
from .perturbation import DerivativeBounds, derivative_bounds
from .tv import fit_step_surrogate, ptb, tv_lambda, tv_residuals, tvb

__all__ = [
    "CrossfitConfig",
    "certify_crossfit",
    "TVCertifier",
    "NWCertifier",
    "LipschitzCertifier",
    "METHODS",
    "CROSSFIT_FLAG",
]

METHODS = ("tv", "nw", "lipschitz")
CROSSFIT_FLAG = "crossfit_pooled"


@dataclass(frozen=True)
class CrossfitConfig:
    """Settings for one cross-fitted certification.

    ``params`` holds method parameters: ``V`` for tv; ``h`` or ``b1``/``b2``
    (and optionally ``bandwidth``) for nw; ``L`` or ``h`` plus optional
    ``bucket_counts``/``shift_count`` for lipschitz.
    """

    method: str
    delta: float = 0.05
    K: int = 5
    seed: int = 0
    subsample: bool = True
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.K < 2:
            raise ValueError(f"fold count must be >= 2, got {self.K}")
        if not 0.0 < self.delta < 1.0:
            raise ValueError(f"delta must lie in (0, 1), got {self.delta}")


def _nw_bounds(params: dict) -> DerivativeBounds:
    if params.get("b1") is not None or params.get("b2") is not None:
        return DerivativeBounds(float(params["b1"]), float(params["b2"]))
    h = params.get("h")
    return derivative_bounds(2.0**-6 if h is None else float(h))


def _lipschitz_constant(params: dict) -> float:
    if params.get("L") is not None:
        return float(params["L"])
    if params.get("h") is not None:
        return derivative_bounds(float(params["h"])).b1
    raise ValueError("lipschitz certification needs L or h")


def _fold_indices(dataset, config):
    plan = make_split_plan(len(dataset), config.K, config.seed)
    for k, (train_idx, valid_idx) in enumerate(plan.folds()):
        if config.subsample:
            valid_idx = subsample_validation(valid_idx, len(dataset), config.seed, fold=k)
        yield k, train_idx, valid_idx


def _crossfit_tv(dataset, config):
    V = float(config.params.get("V", 1.0))
    budget = DeltaBudget.equal(config.delta, 4)
    K = config.K
    resid, weights, tvbs, ptbs, folds = [], [], [], [], []
    for k, tr, va in _fold_indices(dataset, config):
        train, valid = dataset.subset(tr), dataset.subset(va)
        lam = tv_lambda(len(train), budget[1] / K)
        sur, fit = fit_step_surrogate(train, lam)
        r = tv_residuals(sur, valid)
        resid.append(r)
        weights.append(r.size)
        tvbs.append(tvb(len(train), budget[1] / K, V))
        ptbs.append(ptb(V, sur.total_variation_hat, len(train), budget[2] / K, budget[3] / K))
        folds.append({
            "fold": k, "n_train": len(train), "n_valid": int(r.size),
            "lambda": lam, "V_hat": sur.total_variation_hat,
            "segments": len(fit.segments), "empirical": math.fsum(r) / r.size,
            "below_first_breakpoint": int(np.count_nonzero(valid.scores < sur.breakpoints[0])),
        })
    pooled = np.concatenate(resid)
    w = np.asarray(weights, dtype=float) / pooled.size
    terms = {
        "empirical": math.fsum(pooled) / pooled.size,
        "bernstein": bernstein_bound(pooled.size, budget[4], empirical_variance(pooled)),
        "tvb": math.fsum(w * np.asarray(tvbs)),
        "ptb": math.fsum(w * np.asarray(ptbs)),
    }
    flags = [CROSSFIT_FLAG]
    if any(f["below_first_breakpoint"] for f in folds):
        flags.append("left_extrapolation")
    return BoundReport(
        method="tv", n_train=len(dataset), n_valid=int(pooled.size), delta=config.delta,
        terms=terms,
        diagnostics={"V": V, "K": K, "delta_parts": list(budget.parts), "folds": folds},
        seed=config.seed, flags=tuple(flags),
    )


def _crossfit_nw(dataset, config):
    bounds = _nw_bounds(config.params)
    budget = DeltaBudget.equal(config.delta, 2)
    resid, gs, fb, envelopes, folds = [], [], [], [], []
    for k, tr, va in _fold_indices(dataset, config):
        train = dataset.subset(tr)
        sur = NWSurrogate(b1=bounds.b1, b2=bounds.b2,
                          bandwidth=config.params.get("bandwidth")).fit(train.scores, train.labels)
        vt = nw_validation_terms(sur, dataset.scores[va])
        resid.append(vt["resid"])
        gs.append(vt["g"])
        fb.append(vt["fallback"])
        envelopes.append(vt["envelope"])
        folds.append({
            "fold": k, "n_train": len(train), "n_valid": int(va.size),
            "bandwidth": sur.bandwidth_, "R": sur.envelope_, "envelope": vt["envelope"],
            "fallback_count": int(vt["fallback"].sum()),
        })
    return _nw_report(
        np.concatenate(resid), np.concatenate(gs), max(envelopes), budget,
        n_train=len(dataset), seed=config.seed,
        diagnostics={
            "b1": bounds.b1, "b2": bounds.b2, "K": config.K,
            "fallback_count": int(sum(f.sum() for f in fb)), "folds": folds,
        },
        flags=(CROSSFIT_FLAG,),
    )


def certify_crossfit(dataset: ScoredDataset, config: CrossfitConfig) -> BoundReport:
    """Cross-fitted certified CE bound for ``config.method``.

    The Lipschitz baseline fits no surrogate, so it is evaluated directly on
    the whole dataset.
    """
    if config.method == "tv":
        return _crossfit_tv(dataset, config)
    if config.method == "nw":
        return _crossfit_nw(dataset, config)
    p = config.params
    return certify_lipschitz(
        dataset, _lipschitz_constant(p), bucket_counts=p.get("bucket_counts"),
        shift_count=int(p.get("shift_count", DEFAULT_SHIFTS)), delta=config.delta,
        seed=config.seed,
    )


class _CertifierBase(BaseEstimator):
    method: str

    def _params(self) -> dict:
        raise NotImplementedError

    def fit(self, scores, labels):
        data = ScoredDataset(scores, labels)
        cfg = CrossfitConfig(self.method, delta=self.delta, K=self.folds, seed=self.random_state,
                             subsample=self.subsample, params=self._params())
        self.report_ = certify_crossfit(data, cfg)
        self.bound_ = self.report_.bound
        return self


class TVCertifier(_CertifierBase):
    """Cross-fitted CE certificate under a total-variation budget.

    Parameters
    ----------
    V : float, default=1.0
        Upper bound on the total variation of eta (1 for monotone eta).
    delta : float, default=0.05
    folds : int, default=5
    random_state : int, default=0
    subsample : bool, default=True
    """

    method = "tv"

    def __init__(self, V=1.0, delta=0.05, folds=5, random_state=0, subsample=True):
        self.V = V
        self.delta = delta
        self.folds = folds
        self.random_state = random_state
        self.subsample = subsample

    def _params(self):
        return {"V": self.V}


class NWCertifier(_CertifierBase):
    """Cross-fitted CE certificate under bounded eta derivatives.

    Give either the perturbation bandwidth ``h`` or explicit ``b1``/``b2``.
    """

    method = "nw"

    def __init__(self, h=2.0**-6, b1=None, b2=None, bandwidth=None, delta=0.05, folds=5,
                 random_state=0, subsample=True):
        self.h = h
        self.b1 = b1
        self.b2 = b2
        self.bandwidth = bandwidth
        self.delta = delta
        self.folds = folds
        self.random_state = random_state
        self.subsample = subsample

    def _params(self):
        p = {"bandwidth": self.bandwidth}
        if self.b1 is not None or self.b2 is not None:
            p.update(b1=self.b1, b2=self.b2)
        else:
            p["h"] = self.h
        return p


class LipschitzCertifier(_CertifierBase):
    """Shift-aggregated bucketing CE certificate for an L-Lipschitz eta."""

    method = "lipschitz"

    def __init__(self, L=None, h=None, bucket_counts=None, shift_count=DEFAULT_SHIFTS,
                 delta=0.05, folds=5, random_state=0, subsample=True):
        self.L = L
        self.h = h
        self.bucket_counts = bucket_counts
        self.shift_count = shift_count
        self.delta = delta
        self.folds = folds
        self.random_state = random_state
        self.subsample = subsample

    def _params(self):
        return {"L": self.L, "h": self.h, "bucket_counts": self.bucket_counts,
                "shift_count": self.shift_count}
