"""Synthetic calibration problems with known CE, and the rate-sweep harness.

A problem is a calibration function eta (an :class:`EtaSpec`) together with
a score law. Labels are drawn as ``y ~ Bernoulli(eta(s))``. :func:`true_ce`
integrates ``|s - eta(s)| p(s)`` piecewise with Gauss-Legendre panels split
at kinks, jumps and sign changes, so the oracle is accurate to ~1e-12.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from joblib import Parallel, delayed
from scipy import optimize, stats

from .bucketing import ece
from .core import ScoredDataset, derive_rng
from .crossfit import CrossfitConfig, certify_crossfit
from .perturbation import (
    DerivativeBounds,
    PerturbSpec,
    derivative_bounds,
    perturb_scores,
    sech_normalizer,
)

__all__ = [
    "EtaSpec",
    "Identity",
    "Offset",
    "SmoothWiggle",
    "Step",
    "HighFrequency",
    "Perturbed",
    "ScoreLaw",
    "make_eta",
    "get_score_law",
    "FAMILIES",
    "sample_synthetic",
    "true_ce",
    "RateRow",
    "RateTable",
    "rate_sweep",
    "fit_slope",
    "default_method_params",
]

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(20)
_SCAN = 20001
DEFAULT_PERTURBATION = 2.0**-6


def _deriv_roots(f, lo, hi, points=_SCAN):
    """Sign changes of ``f`` on a dense grid, refined by brentq."""
    x = np.linspace(lo, hi, points)
    v = f(x)
    roots = [float(x[i]) for i in np.flatnonzero(v == 0.0)]
    scalar = lambda t: float(f(np.array([t]))[0])  # noqa: E731
    for i in np.flatnonzero(v[:-1] * v[1:] < 0):
        a, b = x[i], x[i + 1]
        # batched and scalar evaluation can round differently right at a root
        if scalar(a) * scalar(b) >= 0:
            roots.append(float(a if abs(v[i]) <= abs(v[i + 1]) else b))
            continue
        roots.append(optimize.brentq(scalar, a, b, xtol=1e-15, rtol=4 * np.finfo(float).eps))
    return sorted(roots)


@dataclass(frozen=True)
class EtaSpec:
    """Calibration function on [0, 1] with its regularity constants."""

    family = "base"

    def eta(self, s) -> np.ndarray:
        raise NotImplementedError

    def breakpoints(self) -> tuple[float, ...]:
        """Interior points where eta has a kink or a jump."""
        return ()

    def _derivative(self, s) -> np.ndarray | None:
        return None

    def total_variation(self) -> float:
        pts = {0.0, 1.0, *self.breakpoints()}
        if self._derivative(np.zeros(1)) is not None:
            pts.update(_deriv_roots(self._derivative, 0.0, 1.0))
        x = np.array(sorted(pts))
        left = self.eta(x)
        # eta is monotone between consecutive points, and a jump at b is
        # captured because b itself is one of the points
        return math.fsum(np.abs(np.diff(left)))

    def lipschitz(self) -> float | None:
        return None

    def derivative_bounds(self) -> DerivativeBounds | None:
        return None

    def describe(self) -> dict:
        return {"family": self.family, **{k: v for k, v in self.__dict__.items()}}


@dataclass(frozen=True)
class Identity(EtaSpec):
    """Perfect calibration, ``eta(s) = s``."""

    family = "identity"

    def eta(self, s):
        return np.asarray(s, dtype=float).copy()

    def total_variation(self):
        return 1.0

    def lipschitz(self):
        return 1.0

    def derivative_bounds(self):
        return DerivativeBounds(1.0, 0.0)


@dataclass(frozen=True)
class Offset(EtaSpec):
    """Constant over/under-confidence, ``eta(s) = clip(s + c, 0, 1)``."""

    c: float = 0.1
    family = "offset"

    def eta(self, s):
        return np.clip(np.asarray(s, dtype=float) + self.c, 0.0, 1.0)

    def breakpoints(self):
        k = 1.0 - self.c if self.c > 0 else -self.c
        return (k,) if 0.0 < k < 1.0 else ()

    def total_variation(self):
        return float(self.eta(1.0) - self.eta(0.0))

    def lipschitz(self):
        return 1.0 if abs(self.c) < 1.0 else 0.0

    def derivative_bounds(self):
        if self.c == 0.0:
            return DerivativeBounds(1.0, 0.0)
        if abs(self.c) >= 1.0:
            return DerivativeBounds(0.0, 0.0)
        return None


@dataclass(frozen=True)
class SmoothWiggle(EtaSpec):
    """``eta(s) = clip(s + A sin(2 pi f s), 0, 1)``; smooth when the clip is inactive."""

    amplitude: float = 0.1
    frequency: float = 1.0
    family = "smooth-wiggle"

    def _raw(self, s):
        s = np.asarray(s, dtype=float)
        return s + self.amplitude * np.sin(2.0 * np.pi * self.frequency * s)

    def eta(self, s):
        return np.clip(self._raw(s), 0.0, 1.0)

    def _derivative(self, s):
        w = 2.0 * np.pi * self.frequency
        return 1.0 + self.amplitude * w * np.cos(w * np.asarray(s, dtype=float))

    def breakpoints(self):
        pts = [r for r in _deriv_roots(lambda x: self._raw(x), 0.0, 1.0) if 0.0 < r < 1.0]
        pts += [r for r in _deriv_roots(lambda x: self._raw(x) - 1.0, 0.0, 1.0) if 0.0 < r < 1.0]
        return tuple(sorted(pts))

    def clipped(self) -> bool:
        x = np.linspace(0.0, 1.0, _SCAN)
        raw = self._raw(x)
        return bool(raw.min() < 0.0 or raw.max() > 1.0)

    def lipschitz(self):
        return 1.0 + 2.0 * np.pi * self.frequency * abs(self.amplitude)

    def derivative_bounds(self):
        if self.clipped():
            return None
        w = 2.0 * np.pi * self.frequency
        return DerivativeBounds(1.0 + w * abs(self.amplitude), w * w * abs(self.amplitude))


@dataclass(frozen=True)
class Step(EtaSpec):
    """Piecewise-constant eta: ``levels[j]`` on ``[jumps[j-1], jumps[j])``."""

    jumps: tuple[float, ...] = (0.25, 0.5, 0.75)
    levels: tuple[float, ...] = (0.1, 0.35, 0.65, 0.9)
    family = "step"

    def __post_init__(self):
        if len(self.levels) != len(self.jumps) + 1:
            raise ValueError("need exactly one more level than jumps")
        if any(not 0.0 < j < 1.0 for j in self.jumps) or list(self.jumps) != sorted(set(self.jumps)):
            raise ValueError("jumps must be strictly increasing inside (0, 1)")
        if any(not 0.0 <= v <= 1.0 for v in self.levels):
            raise ValueError("levels must lie in [0, 1]")

    def eta(self, s):
        idx = np.searchsorted(np.asarray(self.jumps), np.asarray(s, dtype=float), side="right")
        return np.asarray(self.levels, dtype=float)[idx]

    def breakpoints(self):
        return tuple(self.jumps)

    def total_variation(self):
        return math.fsum(abs(b - a) for a, b in zip(self.levels, self.levels[1:]))


@dataclass(frozen=True)
class HighFrequency(EtaSpec):
    """Fast oscillation ``s + A sin(2 pi F s) 4 s (1 - s)``.

    The ``4 s (1 - s)`` envelope keeps eta inside [0, 1] for ``A <= 1/4``
    without clipping, so eta stays twice differentiable. When ``F`` is a
    multiple of the ECE bin count each bin averages the oscillation away.
    """

    amplitude: float = 0.25
    frequency: float = 15.0
    family = "high-frequency"

    def __post_init__(self):
        if not 0.0 <= self.amplitude <= 0.25:
            raise ValueError("amplitude must lie in [0, 1/4]")

    def eta(self, s):
        s = np.asarray(s, dtype=float)
        return s + self.amplitude * np.sin(2.0 * np.pi * self.frequency * s) * 4.0 * s * (1.0 - s)

    def _derivative(self, s):
        s = np.asarray(s, dtype=float)
        w = 2.0 * np.pi * self.frequency
        return 1.0 + self.amplitude * (w * np.cos(w * s) * 4.0 * s * (1.0 - s)
                                       + np.sin(w * s) * 4.0 * (1.0 - 2.0 * s))

    def lipschitz(self):
        return self.derivative_bounds().b1

    def derivative_bounds(self):
        w = 2.0 * np.pi * self.frequency
        a = self.amplitude
        return DerivativeBounds(1.0 + a * (w + 4.0), a * (w * w + 8.0 * w + 8.0))


@dataclass(frozen=True)
class ScoreLaw:
    """Distribution of classifier scores on [0, 1]."""

    name: str = "uniform"

    def __post_init__(self):
        if self.name not in ("uniform", "mixture"):
            raise ValueError(f"unknown score law {self.name!r}")

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.name == "uniform":
            return rng.random(n)
        left = rng.random(n) < 0.5
        return np.where(left, rng.beta(2.0, 5.0, n), rng.beta(5.0, 2.0, n))

    def pdf(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        if self.name == "uniform":
            return np.where((s >= 0) & (s <= 1), 1.0, 0.0)
        return 0.5 * stats.beta.pdf(s, 2.0, 5.0) + 0.5 * stats.beta.pdf(s, 5.0, 2.0)


def get_score_law(law) -> ScoreLaw:
    return law if isinstance(law, ScoreLaw) else ScoreLaw(str(law))


def _panel_nodes(splits, max_width):
    """Gauss-Legendre nodes/weights over [0, 1] with panels no wider than ``max_width``."""
    edges = [0.0]
    for a, b in zip(splits[:-1], splits[1:]):
        k = max(1, int(math.ceil((b - a) / max_width)))
        edges.extend(np.linspace(a, b, k + 1)[1:].tolist())
    e = np.asarray(edges)
    lo, hi = e[:-1, None], e[1:, None]
    half = 0.5 * (hi - lo)
    x = (lo + hi) / 2.0 + half * _GL_NODES[None, :]
    w = half * _GL_WEIGHTS[None, :]
    return x.ravel(), w.ravel()


def _sech(x):
    ax = np.abs(x)
    e = np.exp(-ax)
    return 2.0 * e / (1.0 + e * e)


@dataclass(frozen=True)
class Perturbed(EtaSpec):
    """Calibration function of a base problem after sech score perturbation.

    Scores ``u ~ law`` get labels from ``base.eta(u)`` and are then replaced by
    a draw from the truncated sech kernel at bandwidth ``h``. The resulting
    eta is ``N(s) / D(s)`` with ``D(s) = int p(u) k(s|u) du`` and
    ``N(s) = int p(u) eta(u) k(s|u) du``.
    """

    base: EtaSpec = field(default_factory=Step)
    h: float = DEFAULT_PERTURBATION
    law: ScoreLaw = field(default_factory=ScoreLaw)
    family = "perturbed"

    def _inner(self):
        splits = sorted({0.0, 1.0, *self.base.breakpoints()})
        u, w = _panel_nodes(splits, self.h / 2.0)
        wk = w * self.law.pdf(u) / sech_normalizer(u, self.h)
        return u, wk, wk * self.base.eta(u)

    def density_and_numerator(self, s) -> tuple[np.ndarray, np.ndarray]:
        s = np.asarray(s, dtype=float)
        u, wd, wn = self._inner()
        D = np.empty(s.size)
        N = np.empty(s.size)
        flat = s.ravel()
        for start in range(0, flat.size, 2048):
            chunk = flat[start:start + 2048]
            K = _sech((chunk[:, None] - u[None, :]) / self.h)
            D[start:start + 2048] = K @ wd
            N[start:start + 2048] = K @ wn
        return D.reshape(s.shape), N.reshape(s.shape)

    def eta(self, s):
        D, N = self.density_and_numerator(s)
        return N / D

    def total_variation(self):
        x = np.linspace(0.0, 1.0, 100001)
        return math.fsum(np.abs(np.diff(self.eta(x))))

    def lipschitz(self):
        return derivative_bounds(self.h).b1

    def derivative_bounds(self):
        return derivative_bounds(self.h)

    def describe(self):
        return {"family": self.family, "base": self.base.describe(), "h": self.h,
                "law": self.law.name}


FAMILIES: dict[str, type[EtaSpec]] = {
    cls.family: cls for cls in (Identity, Offset, SmoothWiggle, Step, HighFrequency)
}


def make_eta(family: str, perturb_h: float | None = None, score_law="uniform", **params) -> EtaSpec:
    """Build a family by tag; ``perturb_h`` wraps it in :class:`Perturbed`."""
    if family not in FAMILIES:
        raise ValueError(f"unknown family {family!r}; expected one of {sorted(FAMILIES)}")
    spec = FAMILIES[family](**params)
    if perturb_h is not None:
        spec = Perturbed(base=spec, h=float(perturb_h), law=get_score_law(score_law))
    return spec


def _check_law(spec: EtaSpec, law: ScoreLaw) -> None:
    if isinstance(spec, Perturbed) and spec.law != law:
        raise ValueError(f"perturbed spec was built for score law {spec.law.name!r}")


def sample_synthetic(spec: EtaSpec, score_law, n: int, seed: int = 0) -> ScoredDataset:
    """Draw ``n`` i.i.d. (score, label) pairs; identical output for identical seeds."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    law = get_score_law(score_law)
    _check_law(spec, law)
    rng = derive_rng(seed, 0x5F47)
    s = law.sample(rng, n)
    if isinstance(spec, Perturbed):
        y = rng.random(n) < spec.base.eta(s)
        s = perturb_scores(s, PerturbSpec(spec.h, int(rng.integers(2**63))))
    else:
        y = rng.random(n) < spec.eta(s)
    return ScoredDataset(s, y.astype(np.int8))


def _abs_integral(phi: Callable, splits, max_width: float) -> float:
    roots = []
    for a, b in zip(splits[:-1], splits[1:]):
        pts = max(2001, int((b - a) / max_width) * 8 + 1)
        roots += [r for r in _deriv_roots(phi, a, b, points=pts) if a < r < b]
    x, w = _panel_nodes(sorted(set(splits) | set(roots)), max_width)
    return float(math.fsum(w * np.abs(phi(x))))


def true_ce(spec: EtaSpec, score_law="uniform") -> float:
    """Oracle ``E|s - eta(s)|`` under the score law, by piecewise quadrature."""
    law = get_score_law(score_law)
    _check_law(spec, law)
    if isinstance(spec, Perturbed):
        def phi(s):
            D, N = spec.density_and_numerator(s)
            return np.asarray(s) * D - N

        return _abs_integral(phi, [0.0, 1.0], spec.h / 2.0)
    splits = sorted({0.0, 1.0, *spec.breakpoints()})

    def phi(s):
        return (np.asarray(s) - spec.eta(s)) * law.pdf(s)

    return _abs_integral(phi, splits, 1.0 / 64.0)


@dataclass(frozen=True)
class RateRow:
    n: int
    mean_gap: float
    std_gap: float


@dataclass
class RateTable:
    """Mean and spread of (bound - true CE) per method and sample size."""

    rows: dict[str, list[RateRow]]
    slopes: dict[str, float]
    true_ce: float
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for method, rows in self.rows.items():
            ns = [r.n for r in rows]
            if any(b <= a for a, b in zip(ns, ns[1:])):
                raise ValueError(f"n values for {method!r} are not strictly increasing")
            if not all(math.isfinite(r.mean_gap) and math.isfinite(r.std_gap) for r in rows):
                raise ValueError(f"non-finite gap for {method!r}")

    def gap(self, method: str, n: int) -> float:
        for r in self.rows[method]:
            if r.n == n:
                return r.mean_gap
        raise KeyError((method, n))

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("method,n,mean_gap,std_gap\n")
        for method, rows in self.rows.items():
            for r in rows:
                buf.write(f"{method},{r.n},{r.mean_gap!r},{r.std_gap!r}\n")
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "true_ce": self.true_ce,
            "slopes": {k: (None if math.isnan(v) else v) for k, v in self.slopes.items()},
            "rows": {m: [{"n": r.n, "mean_gap": r.mean_gap, "std_gap": r.std_gap} for r in rows]
                     for m, rows in self.rows.items()},
            "meta": self.meta,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def fit_slope(points: Sequence[tuple[float, float]]) -> float:
    """Least-squares slope of ``log(gap)`` against ``log(n)``."""
    pts = list(points)
    if len(pts) < 2:
        raise ValueError("need at least 2 points to fit a slope")
    n = np.array([p[0] for p in pts], dtype=float)
    g = np.array([p[1] for p in pts], dtype=float)
    if np.any(g <= 0) or np.any(n <= 0):
        raise ValueError("gaps and sample sizes must be positive")
    x, z = np.log(n), np.log(g)
    xc = x - x.mean()
    return float(np.dot(xc, z - z.mean()) / np.dot(xc, xc))


def default_method_params(spec: EtaSpec) -> dict[str, dict]:
    """Regularity constants taken from the family itself.

    Families without bounded derivatives fall back to the constants implied
    by perturbation at bandwidth 2^-6.
    """
    db = spec.derivative_bounds() or derivative_bounds(DEFAULT_PERTURBATION)
    L = spec.lipschitz()
    return {
        "tv": {"V": spec.total_variation()},
        "nw": {"b1": db.b1, "b2": db.b2},
        "lipschitz": {"L": L if L is not None else derivative_bounds(DEFAULT_PERTURBATION).b1},
    }


def _one_repeat(spec, law, n, rep, methods, params, delta, folds, seed, ce):
    data = sample_synthetic(spec, law, n, seed=int(derive_rng(seed, n, rep).integers(2**63)))
    gaps = {}
    for name, fn in methods:
        if fn is not None:
            gaps[name] = float(fn(data)) - ce
        elif name == "ece":
            gaps[name] = abs(ece(data.scores, data.labels) - ce)
        else:
            cfg = CrossfitConfig(name, delta=delta, K=folds, seed=rep, params=params[name])
            gaps[name] = certify_crossfit(data, cfg).bound - ce
    return gaps


def rate_sweep(
    spec: EtaSpec,
    methods: Sequence,
    n_grid: Sequence[int],
    repeats: int,
    delta: float = 0.05,
    seed: int = 0,
    score_law="uniform",
    folds: int = 5,
    params: dict | None = None,
    n_jobs: int = 1,
) -> RateTable:
    """Average gap between certified bound and true CE over repeated draws.

    ``methods`` entries are ``"tv"``, ``"nw"``, ``"lipschitz"``, ``"ece"``
    (gap is ``|ECE - CE|``) or ``(name, callable)`` pairs mapping a dataset
    to a bound. ``params`` overrides :func:`default_method_params` per method.
    """
    n_grid = [int(n) for n in n_grid]
    if any(b <= a for a, b in zip(n_grid, n_grid[1:])):
        raise ValueError("n_grid must be strictly increasing")
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    law = get_score_law(score_law)
    resolved = []
    for m in methods:
        if isinstance(m, str):
            if m not in ("tv", "nw", "lipschitz", "ece"):
                raise ValueError(f"unknown method {m!r}")
            resolved.append((m, None))
        else:
            resolved.append((str(m[0]), m[1]))
    mp = default_method_params(spec)
    for k, v in (params or {}).items():
        mp[k] = dict(v)
    ce = true_ce(spec, law)
    tasks = [(n, r) for n in n_grid for r in range(repeats)]
    try:
        results = Parallel(n_jobs=n_jobs)(
            delayed(_one_repeat)(spec, law, n, r, resolved, mp, delta, folds, seed, ce)
            for n, r in tasks)
    except Exception as exc:
        raise RuntimeError(f"rate sweep failed for family {spec.family!r}: {exc}") from exc
    rows: dict[str, list[RateRow]] = {}
    for name, _ in resolved:
        rows[name] = []
        for n in n_grid:
            g = np.array([res[name] for (nn, _), res in zip(tasks, results) if nn == n])
            std = float(np.std(g, ddof=1)) if g.size > 1 else 0.0
            rows[name].append(RateRow(n, float(np.mean(g)), std))
    slopes = {}
    for name, rr in rows.items():
        try:
            slopes[name] = fit_slope([(r.n, r.mean_gap) for r in rr])
        except ValueError:
            slopes[name] = float("nan")
    meta = {"spec": spec.describe(), "score_law": law.name, "repeats": repeats,
            "delta": delta, "folds": folds, "seed": seed,
            "params": {k: v for k, v in mp.items() if k in rows}}
    return RateTable(rows=rows, slopes=slopes, true_ce=ce, meta=meta)
