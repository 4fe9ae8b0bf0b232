"""covint: kernel-geometry toolkit for stochastic integration.

Builds reproducing-kernel Hilbert spaces from covariation data, integrates
arbitrary finite families of semimartingale paths against them, and exposes
the finance-side consequences (deflators, superhedging duality on trees, and
a forward-rate drift-restriction workbench) behind a config-driven CLI.
"""

from __future__ import annotations

from .errors import CovintError
from .finance import (
    ConsumptionStream,
    DeflatorPath,
    build_deflator,
    deflator_family,
    martingale_report,
    viability_bound_check,
    wealth_process,
)
from .hjm import (
    BondSurface,
    HjmModel,
    apply_drift_restriction,
    discounted_bond_report,
    drift_restriction_residual,
    ho_lee,
    simulate_surface,
    viability_norm_hjm,
)
from .integration import (
    IntegralResult,
    cs_metric,
    integrate,
    isometry_residual,
    roundtrip_refinement_study,
    roundtrip_residual,
    structural_condition_report,
)
from .rkhs import (
    Kernel,
    KernelSpectrum,
    NormResult,
    inner_product,
    norm_via_limit,
    project,
    spectral_norm,
    validate_kernel,
)
from .simulate import (
    PathEnsemble,
    SemimartingaleModel,
    path_stream,
    realized_covariation,
    simulate_ensemble,
)
from .stoch_kernel import (
    IncrementFamily,
    MetricEstimate,
    StochasticAggregateKernel,
    TimeGrid,
    fv_metric,
    integrand_path,
    rc_metric,
    stoch_norm_sq,
)
from .tree import (
    TreeMarket,
    binomial_tree,
    deflator_polytope,
    hedge_value_recursion,
    optional_decomposition_check,
    replicate_backward,
    superhedge_duality,
    trinomial_tree,
)

__version__ = "0.1.0"

__all__ = [
    "BondSurface",
    "ConsumptionStream",
    "CovintError",
    "DeflatorPath",
    "HjmModel",
    "IncrementFamily",
    "IntegralResult",
    "Kernel",
    "KernelSpectrum",
    "MetricEstimate",
    "NormResult",
    "PathEnsemble",
    "SemimartingaleModel",
    "StochasticAggregateKernel",
    "TimeGrid",
    "TreeMarket",
    "apply_drift_restriction",
    "binomial_tree",
    "build_deflator",
    "cs_metric",
    "deflator_family",
    "deflator_polytope",
    "discounted_bond_report",
    "drift_restriction_residual",
    "fv_metric",
    "hedge_value_recursion",
    "ho_lee",
    "inner_product",
    "integrand_path",
    "integrate",
    "isometry_residual",
    "martingale_report",
    "norm_via_limit",
    "optional_decomposition_check",
    "path_stream",
    "project",
    "rc_metric",
    "realized_covariation",
    "replicate_backward",
    "roundtrip_refinement_study",
    "roundtrip_residual",
    "simulate_ensemble",
    "simulate_surface",
    "spectral_norm",
    "stoch_norm_sq",
    "structural_condition_report",
    "superhedge_duality",
    "trinomial_tree",
    "validate_kernel",
    "viability_bound_check",
    "viability_norm_hjm",
    "wealth_process",
    "__version__",
]
