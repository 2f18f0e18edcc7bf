"""Score perturbation with a truncated hyperbolic-secant kernel.

Replacing a score ``s0`` by a draw from ``sech((s0 - s)/h) / Z(s0, h)`` on [0, 1]
makes the calibration function of the perturbed classifier twice
differentiable with ``|eta'| <= 1/(2h)`` and ``|eta''| <= 3/(2h^2)``, whatever
the original classifier was.

All closed forms go through the Gudermannian ``gd(x) = arctan(sinh(x))``,
the antiderivative of ``sech``; it is evaluated as ``2 arctan(tanh(x/2))`` so
that tiny bandwidths do not overflow.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .core import check_scores_labels, derive_rng

__all__ = [
    "PerturbSpec",
    "DerivativeBounds",
    "SechPerturbation",
    "gudermannian",
    "inverse_gudermannian",
    "sech_normalizer",
    "sech_pdf",
    "sech_cdf",
    "perturb_scores",
    "derivative_bounds",
    "perturbed_eta_discrete",
]


def gudermannian(x):
    """``arctan(sinh(x))`` without overflow."""
    return 2.0 * np.arctan(np.tanh(np.asarray(x, dtype=float) / 2.0))


def inverse_gudermannian(g):
    """``asinh(tan(g))`` for ``g`` in (-pi/2, pi/2)."""
    return 2.0 * np.arctanh(np.tan(np.asarray(g, dtype=float) / 2.0))


def _check_h(h: float) -> None:
    if not h > 0:
        raise ValueError(f"bandwidth h must be positive, got {h}")


def sech_normalizer(s_orig, h: float):
    """Mass of ``sech((s - s_orig)/h)`` over s in [0, 1].

    Equals ``h * (gd((1 - s_orig)/h) + gd(s_orig/h))``; symmetric about 1/2 and
    smallest at the endpoints, where it is ``h * gd(1/h)``.
    """
    _check_h(h)
    s0 = np.asarray(s_orig, dtype=float)
    if np.any((s0 < 0) | (s0 > 1)):
        raise ValueError("s_orig must lie in [0, 1]")
    z = h * (gudermannian((1.0 - s0) / h) + gudermannian(s0 / h))
    return float(z) if z.ndim == 0 else z


def sech_pdf(s, s_orig, h: float):
    """Density of the perturbed score at ``s`` given ``s_orig``."""
    s = np.asarray(s, dtype=float)
    s0 = np.asarray(s_orig, dtype=float)
    dens = 1.0 / np.cosh((s - s0) / h) / sech_normalizer(s0, h)
    return np.where((s >= 0) & (s <= 1), dens, 0.0)


def sech_cdf(s, s_orig, h: float):
    """Analytic CDF ``h [gd((s - s0)/h) - gd(-s0/h)] / Z`` clipped to [0, 1]."""
    s = np.clip(np.asarray(s, dtype=float), 0.0, 1.0)
    s0 = np.asarray(s_orig, dtype=float)
    z = sech_normalizer(s0, h)
    return h * (gudermannian((s - s0) / h) - gudermannian(-s0 / h)) / z


@dataclass(frozen=True)
class PerturbSpec:
    """Perturbation bandwidth and the seed for its random draws."""

    h: float = 2.0**-6
    seed: int = 0

    def __post_init__(self):
        _check_h(self.h)


def perturb_scores(scores, spec: PerturbSpec) -> np.ndarray:
    """Draw one perturbed score per input by exact inverse-CDF sampling."""
    s0, _ = check_scores_labels(scores)
    h = spec.h
    u = derive_rng(spec.seed, 0x5EC4).random(s0.size)
    lo = gudermannian(-s0 / h)
    hi = gudermannian((1.0 - s0) / h)
    # gd(-s0/h) + u * (gd((1-s0)/h) - gd(-s0/h)) inverted through gd^-1
    g = lo + u * (hi - lo)
    s = s0 + h * inverse_gudermannian(g)
    return np.clip(s, 0.0, 1.0)


@dataclass(frozen=True)
class DerivativeBounds:
    """Uniform bounds on the first and second derivative of eta."""

    b1: float
    b2: float


def derivative_bounds(h: float) -> DerivativeBounds:
    """``b1 = 1/(2h)``, ``b2 = 3/(2h^2)`` for perturbation bandwidth ``h``."""
    _check_h(h)
    return DerivativeBounds(b1=1.0 / (2.0 * h), b2=1.5 / (h * h))


def perturbed_eta_discrete(s, support, mass, eta_orig, h: float) -> np.ndarray:
    """Calibration function after perturbation for a discrete score law.

    ``support``/``mass`` describe p(s_orig); ``eta_orig`` gives the original
    calibration value at each support point. Returns
    ``sum_j m_j eta_j k(s|u_j) / sum_j m_j k(s|u_j)``.
    """
    s = np.asarray(s, dtype=float)[:, None]
    u = np.asarray(support, dtype=float)[None, :]
    w = np.asarray(mass, dtype=float)[None, :] / sech_normalizer(u, h)
    # shift the log-sech by its row max so distant support points do not underflow
    logk = -np.logaddexp(0.0, -2.0 * np.abs(s - u) / h) - np.abs(s - u) / h
    logk -= logk.max(axis=1, keepdims=True)
    k = w * np.exp(logk)
    return (k @ np.asarray(eta_orig, dtype=float)) / k.sum(axis=1)


class SechPerturbation(TransformerMixin, BaseEstimator):
    """Stateless transformer that replaces scores by sech-perturbed draws.

    Parameters
    ----------
    h : float, default=2**-6
        Perturbation bandwidth.
    random_state : int, default=0
        Seed for the draws; the same seed reproduces the same output.
    """

    def __init__(self, h: float = 2.0**-6, random_state: int = 0):
        self.h = h
        self.random_state = random_state

    def fit(self, scores, labels=None):
        PerturbSpec(self.h, self.random_state)
        self.derivative_bounds_ = derivative_bounds(self.h)
        return self

    def transform(self, scores):
        return perturb_scores(scores, PerturbSpec(self.h, self.random_state))
