r"""Time-indexed aggregate kernels and the per-step Hilbert-space calculus.

A stochastic aggregate kernel assigns to every grid step a PSD increment
``dC_k`` (realized: ``dP_k dP_k'`` rank one; model: ``sigma_k sigma_k' dt_k``).
Families ``F`` of per-asset increment paths are measured step by step in the
kernel geometry of ``dC_k``:

    stochastic norm      sum_k ||dF_k||^2_{dC_k}          (+inf propagates)
    integrand            theta_k = limit of (dC_k + s_k/n id)^{-1} dF_k,
                         s_k = sum_i |dF_k[i]|  (s_k = 1 when dF_k = 0)
    pairing              sum_k theta_k . dH_k

The integrand limit, when it exists, equals the range-restricted inverse and
is computed spectrally per step; steps failing membership raise NOT_IN_RC.

Distances between families and between scalar finite-variation paths are the
exponentially weighted expectations

    sum_{k=1..K_max} 2^{-k} E[ 1 /\ (progress up to horizon k) ],

truncated at ``K_max = ceil(horizon)`` and estimated over path ensembles with
a reported standard error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import HorizonExceededError, MonotonicityError, NotInRangeError
from .rkhs import MEMBERSHIP_TOL

__all__ = [
    "TimeGrid",
    "IncrementFamily",
    "StochasticAggregateKernel",
    "MetricEstimate",
    "SubsetSupResult",
    "from_model",
    "from_realized",
    "stoch_norm_sq",
    "integrand_path",
    "stoch_pairing",
    "fv_metric",
    "rc_metric",
    "subset_sup_norm",
]


@dataclass(frozen=True)
class TimeGrid:
    """Strictly increasing grid ``0 = t_0 < t_1 < ... < t_K``."""

    times: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        if t.ndim != 1 or t.size < 2:
            raise ValueError("grid needs at least two time points")
        if t[0] != 0.0:
            raise ValueError("grid must start at t=0")
        if np.any(np.diff(t) <= 0):
            raise ValueError("grid times must be strictly increasing")
        object.__setattr__(self, "times", t)

    @classmethod
    def uniform(cls, horizon: float, steps: int) -> "TimeGrid":
        if horizon <= 0 or steps < 1:
            raise ValueError("horizon must be positive and steps >= 1")
        return cls(np.linspace(0.0, horizon, steps + 1))

    @property
    def steps(self) -> int:
        return self.times.size - 1

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    @property
    def dt(self) -> np.ndarray:
        return np.diff(self.times)

    def refine(self, factor: int) -> "TimeGrid":
        """Split every interval into ``factor`` uniform pieces."""
        if factor < 1 or int(factor) != factor:
            raise ValueError("refinement factor must be a positive integer")
        t = self.times
        fine = np.empty(self.steps * factor + 1)
        for j in range(factor):
            fine[j::factor][: self.steps] = t[:-1] + (t[1:] - t[:-1]) * (j / factor)
        fine[-1] = t[-1]
        return TimeGrid(fine)

    def index_at_or_before(self, time: float) -> int:
        """Largest grid index with ``t_m <= time`` (tolerant of fp slack)."""
        return int(np.searchsorted(self.times, time * (1 + 1e-12) + 1e-15, side="right")) - 1


@dataclass(frozen=True)
class IncrementFamily:
    """Per-step increments of a labeled family of scalar paths, shape (K, n)."""

    labels: tuple[str, ...]
    increments: np.ndarray

    def __post_init__(self):
        inc = np.asarray(self.increments, dtype=float)
        if inc.ndim != 2 or inc.shape[1] != len(self.labels):
            raise ValueError(
                f"increments shape {inc.shape} does not match {len(self.labels)} labels"
            )
        object.__setattr__(self, "increments", inc)
        object.__setattr__(self, "labels", tuple(str(x) for x in self.labels))

    @classmethod
    def from_path(cls, labels: Sequence[str], path: np.ndarray) -> "IncrementFamily":
        """Build from cumulative path values of shape (K+1, n)."""
        path = np.asarray(path, dtype=float)
        return cls(tuple(labels), np.diff(path, axis=0))

    @property
    def steps(self) -> int:
        return self.increments.shape[0]

    @property
    def dim(self) -> int:
        return self.increments.shape[1]

    def path(self) -> np.ndarray:
        """Cumulative values starting at zero, shape (K+1, n)."""
        out = np.zeros((self.steps + 1, self.dim))
        np.cumsum(self.increments, axis=0, out=out[1:])
        return out

    def restrict(self, subset: Sequence[str]) -> "IncrementFamily":
        idx = _subset_indices(self.labels, subset)
        return IncrementFamily(tuple(str(s) for s in subset), self.increments[:, idx])

    def minus(self, other: "IncrementFamily") -> "IncrementFamily":
        if other.labels != self.labels or other.increments.shape != self.increments.shape:
            raise ValueError("families must share labels and shape")
        return IncrementFamily(self.labels, self.increments - other.increments)


def _subset_indices(labels: tuple[str, ...], subset: Sequence[str]) -> np.ndarray:
    pos = {lab: i for i, lab in enumerate(labels)}
    try:
        return np.array([pos[str(s)] for s in subset], dtype=int)
    except KeyError as exc:
        raise KeyError(f"label {exc} not present in {labels}") from exc


@dataclass(frozen=True)
class StochasticAggregateKernel:
    """Per-step PSD kernel increments over a time grid, shape (K, n, n)."""

    grid: TimeGrid
    labels: tuple[str, ...]
    increments: np.ndarray

    def __post_init__(self):
        inc = np.asarray(self.increments, dtype=float)
        n = len(self.labels)
        if inc.shape != (self.grid.steps, n, n):
            raise ValueError(
                f"kernel increments shape {inc.shape} != ({self.grid.steps}, {n}, {n})"
            )
        object.__setattr__(self, "increments", inc)
        object.__setattr__(self, "labels", tuple(str(x) for x in self.labels))

    @property
    def dim(self) -> int:
        return len(self.labels)

    def aggregate(self) -> np.ndarray:
        """Cumulative kernel path C(t_m), shape (K+1, n, n), C(0) = 0."""
        out = np.zeros((self.grid.steps + 1, self.dim, self.dim))
        np.cumsum(self.increments, axis=0, out=out[1:])
        return out

    def restrict(self, subset: Sequence[str]) -> "StochasticAggregateKernel":
        idx = _subset_indices(self.labels, subset)
        sub = self.increments[:, idx[:, None], idx[None, :]]
        return StochasticAggregateKernel(self.grid, tuple(str(s) for s in subset), sub)

    def column_family(self, label: str) -> IncrementFamily:
        """Increments of the kernel column route C[:, label] as a family."""
        (j,) = _subset_indices(self.labels, [label])
        return IncrementFamily(self.labels, self.increments[:, :, j])

    def validate_psd(self, tol: float = 1.0e-10) -> None:
        """Eigenvalue check of every step (test helper; not on hot paths)."""
        for k in range(self.grid.steps):
            w = np.linalg.eigvalsh(self.increments[k])
            if w[0] < -tol * max(w[-1], 1.0):
                raise ValueError(f"kernel increment at step {k} not PSD: {w[0]:.3e}")


def from_model(
    grid: TimeGrid, labels: Sequence[str], loadings: np.ndarray
) -> StochasticAggregateKernel:
    """Model kernel ``dC_k = sigma_k sigma_k' dt_k`` from loadings (K, n, D)."""
    sig = np.asarray(loadings, dtype=float)
    n = len(labels)
    if sig.ndim != 3 or sig.shape[0] != grid.steps or sig.shape[1] != n:
        raise ValueError(f"loadings shape {sig.shape} != (K={grid.steps}, n={n}, D)")
    inc = np.einsum("kid,kjd->kij", sig, sig) * grid.dt[:, None, None]
    return StochasticAggregateKernel(grid, tuple(labels), inc)


def from_realized(ensemble) -> list[StochasticAggregateKernel]:
    """Per-path realized kernels ``dC_k = dP_k dP_k'`` from a path ensemble."""
    dP = ensemble.price_increments()
    out = []
    for p in range(dP.shape[0]):
        inc = np.einsum("ki,kj->kij", dP[p], dP[p])
        out.append(StochasticAggregateKernel(ensemble.grid, ensemble.labels, inc))
    return out


# ---------------------------------------------------------------------------
# per-step kernel calculus
# ---------------------------------------------------------------------------


def _per_step(sak, family, need_theta: bool, membership_scale: np.ndarray | None = None):
    """Shared spectral sweep: per-step squared norms and coefficients.

    Returns (norm_sq_steps, theta_steps, first_bad_step).  Membership per
    step is judged against ``membership_scale[k]`` (defaults to |dF_k|).
    """
    if family.labels != sak.labels:
        raise ValueError(f"family labels {family.labels} != kernel labels {sak.labels}")
    if family.steps != sak.grid.steps:
        raise ValueError("family and kernel disagree on step count")
    K, n = family.increments.shape
    qs = np.zeros(K)
    thetas = np.zeros((K, n)) if need_theta else None
    first_bad = -1
    eps_rank = n * np.finfo(float).eps
    for k in range(K):
        df = family.increments[k]
        if not df.any():
            continue
        lam, u = np.linalg.eigh(sak.increments[k])
        comps = u.T @ df
        cut = eps_rank * max(lam[-1], 0.0)
        kept = lam > cut
        scale = float(np.linalg.norm(df))
        if membership_scale is not None:
            scale = max(scale, float(membership_scale[k]))
        null_mag = np.abs(comps[~kept]).max() if (~kept).any() else 0.0
        if null_mag > MEMBERSHIP_TOL * scale:
            qs[k] = np.inf
            if first_bad < 0:
                first_bad = k
            continue
        qs[k] = float(np.sum(comps[kept] ** 2 / lam[kept]))
        if need_theta:
            coef = np.zeros(n)
            coef[kept] = comps[kept] / lam[kept]
            thetas[k] = u @ coef
    return qs, thetas, first_bad


def stoch_norm_sq(
    sak: StochasticAggregateKernel,
    family: IncrementFamily,
    *,
    membership_scale: np.ndarray | None = None,
) -> np.ndarray:
    """Cumulative squared stochastic norm path, shape (K+1,); +inf propagates."""
    qs, _, _ = _per_step(sak, family, need_theta=False, membership_scale=membership_scale)
    out = np.zeros(qs.size + 1)
    np.cumsum(qs, out=out[1:])
    return out


def integrand_path(sak: StochasticAggregateKernel, family: IncrementFamily) -> np.ndarray:
    """Per-step integrand coefficients theta_k, shape (K, n).

    Raises :class:`NotInRangeError` when some step fails membership — the
    regularized limit diverges there and no integrand exists.
    """
    qs, thetas, first_bad = _per_step(sak, family, need_theta=True)
    if first_bad >= 0:
        raise NotInRangeError(
            f"increment at step {first_bad} (t={sak.grid.times[first_bad]:g}) "
            "lies outside the kernel increment's range",
            step=first_bad,
        )
    return thetas


def stoch_pairing(
    sak: StochasticAggregateKernel, family_f: IncrementFamily, family_h: IncrementFamily
) -> np.ndarray:
    """Cumulative pairing path ``sum_k theta^F_k . dH_k``, shape (K+1,).

    Both families must be step-wise in range (polarization identity needs
    F + H and F - H measurable too, which membership of both guarantees).
    """
    theta = integrand_path(sak, family_f)
    qs_h, _, bad_h = _per_step(sak, family_h, need_theta=False)
    if bad_h >= 0:
        raise NotInRangeError(
            f"second family fails membership at step {bad_h}", step=bad_h
        )
    steps = np.einsum("ki,ki->k", theta, family_h.increments)
    out = np.zeros(steps.size + 1)
    np.cumsum(steps, out=out[1:])
    return out


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MetricEstimate:
    """Monte Carlo metric value with its standard error."""

    value: float
    standard_error: float
    k_max: int

    def __float__(self) -> float:  # convenience for comparisons in tests
        return self.value


def _resolve_k_max(grid: TimeGrid, k_max: int | None) -> int:
    cap = max(math.ceil(grid.horizon - 1e-12), 1)
    if k_max is None:
        k_max = cap
    if k_max < 1:
        raise ValueError("k_max must be at least 1")
    if k_max > cap:
        raise HorizonExceededError(
            f"metric horizon K_max={k_max} exceeds grid horizon {grid.horizon:g}",
            k_max=k_max,
            horizon=grid.horizon,
        )
    return k_max


def _weighted_tail_mean(progress: np.ndarray, grid: TimeGrid, k_max: int) -> MetricEstimate:
    """Aggregate per-path nondecreasing progress paths (N, K+1) into the metric."""
    idx = [grid.index_at_or_before(float(k)) for k in range(1, k_max + 1)]
    weights = 0.5 ** np.arange(1, k_max + 1)
    clipped = np.minimum(progress[:, idx], 1.0)
    per_path = clipped @ weights
    n = per_path.size
    value = float(np.mean(per_path))
    se = float(np.std(per_path, ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    return MetricEstimate(value, se, k_max)


def fv_metric(
    grid: TimeGrid, paths: np.ndarray, k_max: int | None = None
) -> MetricEstimate:
    """Distance-to-zero of scalar FV paths: sum_k 2^-k E[1 /\\ var_[0,k]].

    ``paths`` has shape (N, K+1) (a single path may be passed as (K+1,)).
    """
    paths = np.atleast_2d(np.asarray(paths, dtype=float))
    if paths.shape[1] != grid.steps + 1:
        raise ValueError("paths must have K+1 columns matching the grid")
    k_max = _resolve_k_max(grid, k_max)
    variation = np.zeros_like(paths)
    np.cumsum(np.abs(np.diff(paths, axis=1)), axis=1, out=variation[:, 1:])
    return _weighted_tail_mean(variation, grid, k_max)


def rc_metric(
    saks: StochasticAggregateKernel | Sequence[StochasticAggregateKernel],
    families_f: IncrementFamily | Sequence[IncrementFamily],
    families_h: IncrementFamily | Sequence[IncrementFamily] | None = None,
    k_max: int | None = None,
) -> MetricEstimate:
    """Kernel-geometry distance between two families over an ensemble.

    Per path the progress variable at horizon k is the square root of the
    cumulative squared stochastic norm of F - H; per-step membership of the
    difference is judged at the scale of the operands, so families equal up
    to rounding measure as distance ~0 rather than +inf.
    """
    sak_list = [saks] if isinstance(saks, StochasticAggregateKernel) else list(saks)
    f_list = [families_f] if isinstance(families_f, IncrementFamily) else list(families_f)
    if families_h is None:
        h_list = [None] * len(f_list)
    elif isinstance(families_h, IncrementFamily):
        h_list = [families_h]
    else:
        h_list = list(families_h)
    if not (len(sak_list) == len(f_list) == len(h_list)):
        raise ValueError("ensemble sizes of kernels and families must match")
    grid = sak_list[0].grid
    k_max = _resolve_k_max(grid, k_max)
    progress = np.zeros((len(sak_list), grid.steps + 1))
    for p, (sak, fam_f, fam_h) in enumerate(zip(sak_list, f_list, h_list)):
        if fam_h is None:
            diff = fam_f
            scale = None
        else:
            diff = fam_f.minus(fam_h)
            scale = np.linalg.norm(fam_f.increments, axis=1) + np.linalg.norm(
                fam_h.increments, axis=1
            )
        progress[p] = np.sqrt(stoch_norm_sq(sak, diff, membership_scale=scale))
    return _weighted_tail_mean(progress, grid, k_max)


# ---------------------------------------------------------------------------
# nested-subset exhaustions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SubsetSupResult:
    """Norm paths along an exhaustion, with the monotonicity certificate."""

    subsets: tuple[tuple[str, ...], ...]
    norm_sq_paths: np.ndarray  # (levels, K+1)
    max_violation: float

    @property
    def final(self) -> np.ndarray:
        return self.norm_sq_paths[-1]


def subset_sup_norm(
    sak: StochasticAggregateKernel,
    family: IncrementFamily,
    exhaustion: Sequence[Sequence[str]],
    *,
    tol: float = 1.0e-10,
) -> SubsetSupResult:
    """Squared-norm paths of restrictions along a nested label exhaustion.

    Certifies the increment ordering: each level's per-step contribution must
    dominate the previous level's (the restriction norms increase).  A breach
    beyond ``tol`` (relative to the local scale) raises
    :class:`MonotonicityError`.
    """
    if not exhaustion:
        raise ValueError("exhaustion must contain at least one subset")
    previous: set[str] = set()
    for j, subset in enumerate(exhaustion):
        cur = {str(s) for s in subset}
        if j > 0 and not previous.issubset(cur):
            raise ValueError(f"exhaustion not nested at level {j}")
        previous = cur
    paths = np.zeros((len(exhaustion), sak.grid.steps + 1))
    steps = np.zeros((len(exhaustion), sak.grid.steps))
    for j, subset in enumerate(exhaustion):
        sub_sak = sak.restrict(subset)
        sub_fam = family.restrict(subset)
        qs, _, _ = _per_step(sub_sak, sub_fam, need_theta=False)
        steps[j] = qs
        np.cumsum(qs, out=paths[j, 1:])
    max_violation = 0.0
    for j in range(1, len(exhaustion)):
        with np.errstate(invalid="ignore"):
            gap = steps[j - 1] - steps[j]  # positive = violation
        gap = gap[np.isfinite(gap)]
        if gap.size:
            max_violation = max(max_violation, float(gap.max()))
        # +inf at a lower level must stay +inf at higher levels
        lower_inf = ~np.isfinite(steps[j - 1])
        if np.any(lower_inf & np.isfinite(steps[j])):
            raise MonotonicityError(
                f"level {j} ({exhaustion[j]}) lost an infinite step of level {j-1}",
                level=j,
            )
    scale = float(np.nanmax(steps[np.isfinite(steps)])) if np.isfinite(steps).any() else 1.0
    if max_violation > tol * max(scale, 1.0):
        raise MonotonicityError(
            f"restriction norms decreased by {max_violation:.3e} along the exhaustion",
            violation=max_violation,
        )
    return SubsetSupResult(
        tuple(tuple(str(s) for s in sub) for sub in exhaustion), paths, max_violation
    )
