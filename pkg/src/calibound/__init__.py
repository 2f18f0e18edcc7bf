"""Certified upper bounds on the L1 calibration error of binary classifiers."""

from __future__ import annotations

from .bucketing import BucketPartition, certify_lipschitz, ece, lipschitz_bucket_bound
from .concentration import bernstein_bound, dkw_bound, empirical_variance
from .core import (
    BoundReport,
    DataValidationError,
    DeltaBudget,
    ScoredDataset,
    SplitPlan,
    load_dataset,
    make_split_plan,
)
from .crossfit import (
    CrossfitConfig,
    LipschitzCertifier,
    NWCertifier,
    TVCertifier,
    certify_crossfit,
)
from .nw import NWSurrogate, certify_nw, envelope_R, plugin_bandwidth
from .perturbation import (
    DerivativeBounds,
    PerturbSpec,
    SechPerturbation,
    derivative_bounds,
    perturb_scores,
    sech_normalizer,
)
from .synth import fit_slope, make_eta, rate_sweep, sample_synthetic, true_ce
from .tv import TVSurrogate, certify_tv, ptb, tv_denoise, tv_lambda, tvb

__version__ = "0.1.0"

__all__ = [
    "BoundReport",
    "BucketPartition",
    "CrossfitConfig",
    "DataValidationError",
    "DeltaBudget",
    "DerivativeBounds",
    "LipschitzCertifier",
    "NWCertifier",
    "NWSurrogate",
    "PerturbSpec",
    "ScoredDataset",
    "SechPerturbation",
    "SplitPlan",
    "TVCertifier",
    "TVSurrogate",
    "bernstein_bound",
    "certify_crossfit",
    "certify_lipschitz",
    "certify_nw",
    "certify_tv",
    "derivative_bounds",
    "dkw_bound",
    "ece",
    "empirical_variance",
    "envelope_R",
    "fit_slope",
    "lipschitz_bucket_bound",
    "load_dataset",
    "make_eta",
    "make_split_plan",
    "perturb_scores",
    "plugin_bandwidth",
    "ptb",
    "rate_sweep",
    "sample_synthetic",
    "sech_normalizer",
    "true_ce",
    "tv_denoise",
    "tv_lambda",
    "tvb",
]
