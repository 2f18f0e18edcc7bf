"""Bounded-derivatives pathway: Nadaraya-Watson surrogate and its certified CE bound.

Training scores are kept sorted so that each query only touches the points
inside its kernel window ``[s' - h_s, s' + h_s]`` (linear total cost).
Weights are Epanechnikov, raised to the power ``tau`` and renormalised; a query
whose window is empty falls back to its nearest training point.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .concentration import bernstein_bound, empirical_variance
from .core import BoundReport, DeltaBudget, ScoredDataset, check_scores_labels
from .perturbation import DerivativeBounds, derivative_bounds

__all__ = [
    "NWSurrogate",
    "NwEvaluation",
    "plugin_root",
    "plugin_bandwidth",
    "envelope_R",
    "nw_weights",
    "nw_eval",
    "smoothing_error_g",
    "covers_unit_interval",
    "certify_nw",
    "nw_validation_terms",
    "TAU",
    "MIN_BANDWIDTH",
    "MAX_BANDWIDTH",
]

TAU = 1.2
MIN_BANDWIDTH = 1e-4
MAX_BANDWIDTH = 0.25


def _plugin_coeffs(b1: float, b2: float, n_train: int) -> tuple[float, float, float]:
    return 0.375 * b1, 0.1 * b2, 1.15 / (2.0 * math.sqrt(2.0 * n_train))


def plugin_root(b1: float, b2: float, n_train: int, max_iter: int = 60) -> float:
    """Positive root ``t`` of ``2b t^5 + a t^3 - c/2`` (before squaring/clipping).

    ``a = 3/8 b1``, ``b = b2/10``, ``c = 1.15 / (2 sqrt(2 n))``. Newton's method
    started from the right of the root converges monotonically because the
    quintic is increasing and convex on t > 0; bisection is the backstop.
    """
    if b1 < 0 or b2 < 0 or (b1 == 0 and b2 == 0):
        raise ValueError("need non-negative derivative bounds, not both zero")
    if n_train < 1:
        raise ValueError(f"n_train must be >= 1, got {n_train}")
    a, b, c = _plugin_coeffs(b1, b2, n_train)

    def f(t):
        return 2.0 * b * t**5 + a * t**3 - 0.5 * c

    # each one-term root over-shoots the true root; take the smaller
    t = min(
        (c / (2.0 * a)) ** (1.0 / 3.0) if a > 0 else math.inf,
        (c / (4.0 * b)) ** 0.2 if b > 0 else math.inf,
    )
    tol = 1e-13 * c
    for _ in range(max_iter):
        ft = f(t)
        if abs(ft) <= tol:
            return t
        t_next = t - ft / (10.0 * b * t**4 + 3.0 * a * t**2)
        if not (0.0 < t_next <= t):
            break
        t = t_next
    lo, hi = 0.0, t
    while f(hi) < 0:
        hi *= 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if f(mid) > 0:
            hi = mid
        else:
            lo = mid
        if abs(f(mid)) <= tol or hi - lo <= 1e-17:
            break
    return 0.5 * (lo + hi)


def plugin_bandwidth(b1: float, b2: float, n_train: int) -> float:
    """Smoothing bandwidth ``t^2`` from :func:`plugin_root`, clipped to [1e-4, 0.25]."""
    t = plugin_root(b1, b2, n_train)
    return float(min(max(t * t, MIN_BANDWIDTH), MAX_BANDWIDTH))


def envelope_R(b1: float, b2: float, h_s: float) -> float:
    """``b1 h_s + b2 h_s^2 / 2 + 1/2``: sup of the smoothing-error bound on the kernel support."""
    if b1 < 0 or b2 < 0 or h_s < 0:
        raise ValueError("envelope_R needs non-negative inputs")
    return b1 * h_s + 0.5 * b2 * h_s * h_s + 0.5


@njit(cache=True, fastmath=True)
def _nw_pass(xs, ys, queries, hs, tau, b1, b2):  # pragma: no cover - compiled
    m = queries.shape[0]
    n = xs.shape[0]
    inv_hs = 1.0 / hs
    eta = np.empty(m)
    g = np.empty(m)
    fallback = np.zeros(m, dtype=np.bool_)
    for j in range(m):
        q = queries[j]
        lo = np.searchsorted(xs, q - hs, side="left")
        hi = np.searchsorted(xs, q + hs, side="right")
        sw = 0.0
        swy = 0.0
        swd = 0.0
        swd2 = 0.0
        sww = 0.0
        for i in range(lo, hi):
            d = q - xs[i]
            u = d * inv_hs
            base = 1.0 - u * u
            if base <= 0.0:
                continue
            w = math.exp(tau * math.log(base))
            sw += w
            swy += w * ys[i]
            ad = abs(d)
            swd += w * ad
            swd2 += w * d * d
            sww += w * w
        if sw > 0.0:
            eta[j] = swy / sw
            g[j] = b1 * swd / sw + 0.5 * b2 * swd2 / sw + 0.5 * math.sqrt(sww) / sw
        else:
            k = np.searchsorted(xs, q, side="left")
            if k == 0:
                nn = 0
            elif k == n:
                nn = n - 1
            else:
                # ties go to the smaller score
                nn = k - 1 if q - xs[k - 1] <= xs[k] - q else k
                if nn == k:
                    # first training point carrying that score
                    nn = np.searchsorted(xs, xs[k], side="left")
                else:
                    nn = np.searchsorted(xs, xs[k - 1], side="left")
            d = abs(q - xs[nn])
            eta[j] = ys[nn]
            g[j] = b1 * d + 0.5 * b2 * d * d + 0.5
            fallback[j] = True
    return eta, g, fallback


class NwEvaluation:
    """Per-query surrogate values, smoothing-error bounds and fallback flags."""

    __slots__ = ("eta", "g", "fallback")

    def __init__(self, eta, g, fallback):
        self.eta = eta
        self.g = g
        self.fallback = fallback


class NWSurrogate(RegressorMixin, BaseEstimator):
    """Tempered Epanechnikov Nadaraya-Watson calibration surrogate.

    Parameters
    ----------
    b1, b2 : float
        Uniform bounds on ``|eta'|`` and ``|eta''|``; they drive the plug-in
        bandwidth and the smoothing-error bound.
    bandwidth : float, optional
        Smoothing bandwidth ``h_s``. ``None`` selects :func:`plugin_bandwidth`.
    tau : float, default=1.2
        Tempering exponent applied to the kernel weights.
    """

    def __init__(self, b1: float = 32.0, b2: float = 6144.0, bandwidth: float | None = None,
                 tau: float = TAU):
        self.b1 = b1
        self.b2 = b2
        self.bandwidth = bandwidth
        self.tau = tau

    @classmethod
    def from_perturbation(cls, h: float, **kwargs) -> "NWSurrogate":
        db = derivative_bounds(h)
        return cls(b1=db.b1, b2=db.b2, **kwargs)

    def fit(self, scores, labels):
        s, y = check_scores_labels(scores, labels)
        order = np.argsort(s, kind="stable")
        self.train_scores_ = np.ascontiguousarray(s[order])
        self.train_labels_ = np.ascontiguousarray(y[order], dtype=float)
        if self.bandwidth is None:
            hs = plugin_bandwidth(self.b1, self.b2, s.size)
        else:
            hs = float(self.bandwidth)
            if not MIN_BANDWIDTH <= hs <= MAX_BANDWIDTH:
                raise ValueError(f"bandwidth must lie in [1e-4, 0.25], got {hs}")
        self.bandwidth_ = hs
        self.envelope_ = envelope_R(self.b1, self.b2, hs)
        self.covers_ = covers_unit_interval(self.train_scores_, hs)
        return self

    def evaluate(self, scores) -> NwEvaluation:
        check_is_fitted(self, "train_scores_")
        q = np.ascontiguousarray(np.asarray(scores, dtype=float).ravel())
        eta, g, fb = _nw_pass(self.train_scores_, self.train_labels_, q, self.bandwidth_,
                              float(self.tau), float(self.b1), float(self.b2))
        return NwEvaluation(eta, g, fb)

    def predict(self, scores):
        s, _ = check_scores_labels(scores)
        return self.evaluate(s).eta

    def smoothing_error(self, scores):
        s, _ = check_scores_labels(scores)
        return self.evaluate(s).g


def covers_unit_interval(sorted_scores: np.ndarray, hs: float) -> bool:
    """True when every point of [0, 1] is strictly within ``hs`` of a training score.

    Under that condition no query in [0, 1] can trigger the nearest-neighbour
    fallback, so the smoothing-error bound never exceeds the envelope.
    """
    xs = sorted_scores
    if xs[0] >= hs or 1.0 - xs[-1] >= hs:
        return False
    return xs.size == 1 or float(np.max(np.diff(xs))) < 2.0 * hs


def nw_weights(surrogate: NWSurrogate, s_query: float) -> np.ndarray:
    """Normalised weights over the (score-sorted) training points for one query."""
    check_is_fitted(surrogate, "train_scores_")
    xs = surrogate.train_scores_
    hs = surrogate.bandwidth_
    d = s_query - xs
    base = np.maximum(0.0, 1.0 - (d / hs) ** 2)
    w = base**surrogate.tau
    if w.sum() > 0:
        return w / w.sum()
    dist = np.abs(d)
    # argmin returns the first minimiser, i.e. the smaller score on ties
    w = np.zeros_like(xs)
    w[int(np.argmin(dist))] = 1.0
    return w


def nw_eval(surrogate: NWSurrogate, s_query):
    """Surrogate calibration value(s), a convex combination of training labels."""
    out = surrogate.evaluate(np.atleast_1d(s_query)).eta
    return float(out[0]) if np.ndim(s_query) == 0 else out


def smoothing_error_g(surrogate: NWSurrogate, s_query):
    """Pointwise bound on ``E|eta_hat(s') - eta(s')|`` given the training scores."""
    out = surrogate.evaluate(np.atleast_1d(s_query)).g
    return float(out[0]) if np.ndim(s_query) == 0 else out


def nw_validation_terms(surrogate: NWSurrogate, valid_scores) -> dict:
    """Per-point residuals and capped smoothing errors for held-out scores.

    Smoothing errors are capped at 1 (the error of a [0,1]-valued surrogate
    never exceeds 1). The envelope is ``min(R, 1)`` when the training scores
    cover [0, 1] at the smoothing bandwidth and 1 otherwise, so every capped
    value divided by the envelope lies in [0, 1].
    """
    ev = surrogate.evaluate(valid_scores)
    R = surrogate.envelope_
    ok = ~ev.fallback
    if np.any(ok):
        worst = float(np.max(ev.g[ok]))
        assert worst <= R * (1 + 1e-12), f"smoothing error {worst} exceeds envelope {R}"
    envelope = min(R, 1.0) if surrogate.covers_ else 1.0
    return {
        "resid": np.abs(ev.eta - np.asarray(valid_scores, dtype=float)),
        "g": np.minimum(ev.g, 1.0),
        "fallback": ev.fallback,
        "envelope": envelope,
    }


def certify_nw(
    train: ScoredDataset,
    valid: ScoredDataset,
    h: float | None = 2.0**-6,
    budget: DeltaBudget | float = 0.05,
    bounds: DerivativeBounds | None = None,
    bandwidth: float | None = None,
    seed: int | None = None,
) -> BoundReport:
    """Certified CE upper bound for a classifier with bounded eta derivatives.

    Either the perturbation bandwidth ``h`` (derivative bounds from the sech
    kernel) or explicit ``bounds`` must be given. ``budget`` is a two-part
    :class:`DeltaBudget` or a total delta split equally.
    """
    if bounds is None:
        if h is None:
            raise ValueError("give a perturbation bandwidth h or explicit derivative bounds")
        bounds = derivative_bounds(h)
    if not isinstance(budget, DeltaBudget):
        budget = DeltaBudget.equal(float(budget), 2)
    if len(budget) != 2:
        raise ValueError("NW certification needs a 2-part delta budget")
    sur = NWSurrogate(b1=bounds.b1, b2=bounds.b2, bandwidth=bandwidth).fit(
        train.scores, train.labels)
    vt = nw_validation_terms(sur, valid.scores)
    return _nw_report(vt["resid"], vt["g"], vt["envelope"], budget,
                      n_train=len(train), seed=seed,
                      diagnostics={
                          "b1": bounds.b1, "b2": bounds.b2,
                          "bandwidth": sur.bandwidth_, "R": sur.envelope_,
                          "fallback_count": int(vt["fallback"].sum()),
                          "covers_unit_interval": bool(sur.covers_),
                      })


def _nw_report(resid, g, envelope, budget, n_train, seed, diagnostics, flags=()):
    n_v = resid.size
    scaled = g / envelope
    terms = {
        "empirical": math.fsum(resid) / n_v,
        "smoothing": math.fsum(g) / n_v,
        "bernstein": bernstein_bound(n_v, budget[1], empirical_variance(resid)),
        "bernstein_smoothing": envelope * bernstein_bound(n_v, budget[2], empirical_variance(scaled)),
    }
    diagnostics = dict(diagnostics, envelope=envelope, delta_parts=list(budget.parts))
    if diagnostics.get("fallback_count"):
        flags = tuple(flags) + ("nn_fallback",)
    return BoundReport(method="nw", n_train=n_train, n_valid=n_v, delta=budget.total,
                       terms=terms, diagnostics=diagnostics, seed=seed, flags=tuple(flags))
