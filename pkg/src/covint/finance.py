r"""Deflators, wealth/withdrawal processes, and viability tail bounds.

The canonical deflator is built from the drift's kernel integrand
``theta_k`` (requires the structural condition): with ``dN_k = theta_k . dM_k``
the product ``Y = prod(1 - dN_k)`` has exactly zero conditional drift against
each asset — ``E[d(Y P_i) | past] = Y (dA_i - (dC theta)_i) = 0`` — so the
Monte-Carlo martingale checks here test the implementation, not the
mathematics.  Factors at or below the positivity floor are counted and the
affected paths are excluded from every reported statistic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import (
    NegativeWealthError,
    NotInRangeError,
    StructuralFailError,
)
from .integration import integrate
from .simulate import PathEnsemble, path_stream
from .stoch_kernel import IncrementFamily, StochasticAggregateKernel, TimeGrid
from .stoch_kernel import integrand_path as _integrand_path

__all__ = [
    "POSITIVITY_FLOOR",
    "DeflatorPath",
    "MartingaleCheck",
    "DeflatorMomentReport",
    "ConsumptionStream",
    "ViabilityReport",
    "build_deflator",
    "deflator_family",
    "driver_increments",
    "martingale_report",
    "wealth_process",
    "deflated_wealth_check",
    "viability_bound_check",
]

#: multiplicative deflator factors at or below this are treated as positivity failures
POSITIVITY_FLOOR = 1e-6


@dataclass(frozen=True)
class DeflatorPath:
    """Candidate deflator paths with their positivity bookkeeping.

    ``Y`` holds every simulated path (excluded ones included, for
    diagnostics); ``retained`` marks the paths on which all factors stayed
    above the floor, and only those enter reported statistics.
    """

    grid: TimeGrid
    labels: tuple[str, ...]
    Y: np.ndarray  # (N, K+1), Y[:, 0] = 1
    ma_path: np.ndarray  # (N, K+1) cumulative drift-integrand martingale
    theta: np.ndarray | None  # (K, n) integrand of the drift family
    retained: np.ndarray  # (N,) bool
    positivity_violations: int
    form: str = "product"

    @property
    def n_paths(self) -> int:
        return self.Y.shape[0]

    @property
    def excluded_paths(self) -> int:
        return int(self.n_paths - np.count_nonzero(self.retained))

    @property
    def retained_fraction(self) -> float:
        return float(np.count_nonzero(self.retained) / self.n_paths)


def build_deflator(
    sak: StochasticAggregateKernel,
    drift_family: IncrementFamily,
    ensemble: PathEnsemble,
    *,
    positivity_floor: float = POSITIVITY_FLOOR,
    form: str = "product",
) -> DeflatorPath:
    """Deflator from the drift family's kernel integrand.

    ``form="product"`` is the discrete stochastic exponential
    ``prod(1 - dN_k)`` whose conditional drift against every asset vanishes
    exactly; ``form="exponential"`` is ``exp(-N - [N]/2)`` for
    continuous-limit studies (always positive, drift only vanishes in the
    limit).
    """
    if form not in ("product", "exponential"):
        raise ValueError(f"unknown deflator form {form!r}")
    try:
        theta = _integrand_path(sak, drift_family)
    except NotInRangeError as err:
        raise StructuralFailError(
            "drift family fails the structural condition: "
            f"not in the kernel increment's range at step {err.context.get('step')}",
            step=err.context.get("step"),
        ) from err
    dN = np.einsum("ki,pki->pk", theta, ensemble.mart_increments)
    N, K = dN.shape
    ma = np.zeros((N, K + 1))
    np.cumsum(dN, axis=1, out=ma[:, 1:])
    Y = np.ones((N, K + 1))
    if form == "product":
        factors = 1.0 - dN
        bad = factors <= positivity_floor
        violations = int(np.count_nonzero(bad))
        retained = ~bad.any(axis=1)
        np.cumprod(factors, axis=1, out=Y[:, 1:])
    else:
        qv = np.cumsum(dN * dN, axis=1)
        Y[:, 1:] = np.exp(-(ma[:, 1:] + 0.5 * qv))
        violations = 0
        retained = np.ones(N, dtype=bool)
    return DeflatorPath(
        ensemble.grid, ensemble.labels, Y, ma, theta, retained, violations, form
    )


def deflator_family(
    base: DeflatorPath,
    dL: np.ndarray,
    *,
    positivity_floor: float = POSITIVITY_FLOOR,
) -> DeflatorPath:
    """Perturbed deflator ``Y' = Y * prod(1 + dL_k)``.

    ``dL`` has shape (K,) or (N, K).  When the perturbation rides on a driver
    independent of the asset drivers, ``Y' P_i`` keeps the martingale
    property; loading it on an asset driver produces the documented bias
    (negative control).  Factors at or below the floor extend the exclusion
    bookkeeping of the base deflator.
    """
    K = base.grid.steps
    dL = np.asarray(dL, dtype=float)
    if dL.ndim == 1:
        dL = np.broadcast_to(dL, (base.n_paths, K))
    if dL.shape != (base.n_paths, K):
        raise ValueError("dL must have shape (K,) or (n_paths, K)")
    factors = 1.0 + dL
    bad = factors <= positivity_floor
    Y = base.Y.copy()
    Y[:, 1:] *= np.cumprod(factors, axis=1)
    return DeflatorPath(
        base.grid,
        base.labels,
        Y,
        base.ma_path,
        base.theta,
        base.retained & ~bad.any(axis=1),
        base.positivity_violations + int(np.count_nonzero(bad)),
        base.form,
    )


def driver_increments(
    grid: TimeGrid,
    n_paths: int,
    gamma: float,
    seed: int,
    *,
    channel: int = 1,
    n_drivers: int = 1,
    driver_column: int = 0,
) -> np.ndarray:
    """Per-path increments ``gamma * sqrt(dt) * Z`` from a named noise channel.

    Any ``channel >= 1`` is guaranteed independent of the asset drivers of an
    ensemble simulated from the same seed (channel 0).  Passing ``channel=0``
    with the ensemble's driver count deliberately *reuses* the asset noise —
    the standard way to construct the correlated negative control.
    """
    sqrt_dt = np.sqrt(grid.dt)
    out = np.empty((n_paths, grid.steps))
    for p in range(n_paths):
        z = path_stream(seed, p, channel).standard_normal((grid.steps, n_drivers))
        out[p] = gamma * sqrt_dt * z[:, driver_column]
    return out


# ---------------------------------------------------------------------------
# martingale statistics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MartingaleCheck:
    label: str
    mean: float
    se: float
    target: float

    @property
    def z(self) -> float:
        if self.se == 0.0:
            return 0.0 if self.mean == self.target else math.inf
        return (self.mean - self.target) / self.se

    def within(self, band: float = 3.0) -> bool:
        return abs(self.z) <= band


@dataclass(frozen=True)
class DeflatorMomentReport:
    """Terminal martingale checks: E[Y(T)] = 1 and E[Y(T) P_i(T)] = P_i(0)."""

    checks: tuple[MartingaleCheck, ...]
    retained_paths: int
    excluded_paths: int

    @property
    def max_abs_z(self) -> float:
        return max(abs(c.z) for c in self.checks)

    def all_within(self, band: float = 3.0) -> bool:
        return all(c.within(band) for c in self.checks)


def _mean_se(values: np.ndarray) -> tuple[float, float]:
    m = values.size
    mean = float(np.mean(values))
    se = float(np.std(values, ddof=1) / math.sqrt(m)) if m > 1 else 0.0
    return mean, se


def martingale_report(
    deflator: DeflatorPath, ensemble: PathEnsemble
) -> DeflatorMomentReport:
    """Deflated terminal-moment report over the retained paths."""
    mask = deflator.retained
    kept = int(np.count_nonzero(mask))
    if kept < 2:
        raise ValueError("need at least two retained paths for moment statistics")
    yT = deflator.Y[mask, -1]
    checks = [MartingaleCheck("Y(T)", *_mean_se(yT), 1.0)]
    terminal = ensemble.terminal_prices()[mask]
    for i, label in enumerate(ensemble.labels):
        mean, se = _mean_se(yT * terminal[:, i])
        checks.append(
            MartingaleCheck(f"Y(T)*{label}(T)", mean, se, float(ensemble.initial[i]))
        )
    return DeflatorMomentReport(tuple(checks), kept, deflator.n_paths - kept)


# ---------------------------------------------------------------------------
# wealth and consumption
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConsumptionStream:
    """Nonnegative per-step withdrawal increments, deterministic or per path."""

    grid: TimeGrid
    increments: np.ndarray  # (K,) or (N, K)

    def __post_init__(self):
        inc = np.asarray(self.increments, dtype=float)
        if inc.shape[-1] != self.grid.steps:
            raise ValueError("increments must have one entry per grid step")
        if np.any(inc < 0.0):
            raise ValueError("withdrawal increments must be nonnegative")
        object.__setattr__(self, "increments", inc)

    @classmethod
    def zero(cls, grid: TimeGrid) -> "ConsumptionStream":
        return cls(grid, np.zeros(grid.steps))

    @classmethod
    def constant_rate(cls, grid: TimeGrid, rate: float) -> "ConsumptionStream":
        if rate < 0.0:
            raise ValueError("rate must be nonnegative")
        return cls(grid, rate * grid.dt)

    def cumulative(self) -> np.ndarray:
        """(K+1,) or (N, K+1) cumulative withdrawal starting at 0."""
        inc = np.atleast_2d(self.increments)
        out = np.zeros((inc.shape[0], self.grid.steps + 1))
        np.cumsum(inc, axis=1, out=out[:, 1:])
        return out[0] if self.increments.ndim == 1 else out


def wealth_process(
    x: float,
    family: IncrementFamily | Sequence[IncrementFamily],
    consumption: ConsumptionStream | None,
    sak: StochasticAggregateKernel | Sequence[StochasticAggregateKernel],
    ensemble: PathEnsemble,
) -> np.ndarray:
    """Wealth paths ``x + (integral of the family) - withdrawals``.

    Nonnegativity is not enforced here; admissibility checks live with the
    caller (see :func:`viability_bound_check`).
    """
    result = integrate(sak, family, ensemble)
    wealth = x + result.X
    if consumption is not None:
        if consumption.grid.steps != ensemble.grid.steps:
            raise ValueError("consumption stream grid does not match the ensemble")
        wealth = wealth - np.atleast_2d(consumption.cumulative())
    return wealth


def deflated_wealth_check(
    deflator: DeflatorPath, wealth: np.ndarray, x: float
) -> MartingaleCheck:
    """Terminal supermartingale statistic E[Y(T) X(T)] against the start x."""
    mask = deflator.retained
    mean, se = _mean_se(deflator.Y[mask, -1] * wealth[mask, -1])
    return MartingaleCheck("Y(T)*X(T)", mean, se, x)


# ---------------------------------------------------------------------------
# viability tail bounds
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ViabilityReport:
    """Empirical wealth tails against the deflator Markov envelope 1/l."""

    strategy_names: tuple[str, ...]
    ell_grid: np.ndarray  # (L,)
    tail: np.ndarray  # (S, L) empirical P[X(T) > l]
    tail_se: np.ndarray  # (S, L)
    deflated_mean: np.ndarray  # (S,) E[Y(T) X(T)] on retained paths
    deflated_se: np.ndarray  # (S,)
    initial: float

    @property
    def envelope(self) -> np.ndarray:
        return 1.0 / self.ell_grid

    @property
    def passed(self) -> bool:
        slack = self.tail - 3.0 * self.tail_se
        return bool(np.all(slack <= self.envelope[None, :] + 1e-12))


def viability_bound_check(
    sak: StochasticAggregateKernel,
    ensemble: PathEnsemble,
    deflator: DeflatorPath,
    strategies: Sequence[tuple[str, np.ndarray]],
    ell_grid: Sequence[float],
    *,
    initial: float = 1.0,
) -> ViabilityReport:
    """Tail-bound table for simple integrand strategies started at ``initial``.

    Each strategy is a constant (n,) or per-step (K, n) coefficient schedule;
    its wealth must stay nonnegative on every sampled path, otherwise the
    strategy has left the admissible class and NegativeWealthError is raised.
    Tails are estimated on all paths; the deflated means use the deflator's
    retained set.
    """
    ells = np.asarray(ell_grid, dtype=float)
    if ells.ndim != 1 or ells.size == 0 or np.any(ells < 1.0):
        raise ValueError("ell_grid must be a nonempty list of levels >= 1")
    K, n = sak.grid.steps, sak.dim
    names, tails, tail_ses, dmeans, dses = [], [], [], [], []
    n_paths = ensemble.n_paths
    for name, schedule in strategies:
        theta = np.broadcast_to(np.asarray(schedule, dtype=float), (K, n))
        fam = IncrementFamily(
            sak.labels, np.einsum("kij,kj->ki", sak.increments, theta)
        )
        wealth = wealth_process(initial, fam, None, sak, ensemble)
        worst = float(np.min(wealth))
        if worst < 0.0:
            p, k = np.unravel_index(np.argmin(wealth), wealth.shape)
            raise NegativeWealthError(
                f"strategy {name!r} reaches wealth {worst:.6g} "
                f"(path {p}, step {k}): outside the admissible class",
                strategy=name,
                min_wealth=worst,
            )
        hit = wealth[:, -1][:, None] > ells[None, :]
        p_hat = hit.mean(axis=0)
        se = np.sqrt(p_hat * (1.0 - p_hat) / n_paths)
        check = deflated_wealth_check(deflator, wealth, initial)
        names.append(name)
        tails.append(p_hat)
        tail_ses.append(se)
        dmeans.append(check.mean)
        dses.append(check.se)
    return ViabilityReport(
        tuple(names),
        ells,
        np.array(tails),
        np.array(tail_ses),
        np.array(dmeans),
        np.array(dses),
        initial,
    )
