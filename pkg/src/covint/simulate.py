"""Euler ensembles with exact drift/martingale bookkeeping.

Reproducibility contract: every path owns a Philox counter block derived
from ``(seed, path index, channel)``, so regenerating any path — or any
prefix of the ensemble — yields bit-identical draws regardless of how many
paths are requested or in which order they are filled.  Channel 0 feeds the
asset drivers; higher channels are reserved for auxiliary independent noise
(e.g. orthogonal deflator perturbations) that must not disturb the asset
draws.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .stoch_kernel import StochasticAggregateKernel, TimeGrid, from_model, from_realized

__all__ = [
    "path_stream",
    "SemimartingaleModel",
    "PathEnsemble",
    "simulate_ensemble",
    "realized_covariation",
    "refine_grid",
    "power_drift",
]

_CHANNEL_STRIDE = 1 << 64
_PATH_STRIDE = 1 << 128


def path_stream(seed: int, path_index: int, channel: int = 0) -> np.random.Generator:
    """Generator for one path's draws, disjoint across paths and channels."""
    if seed < 0 or path_index < 0 or channel < 0:
        raise ValueError("seed, path index and channel must be nonnegative")
    counter = path_index * _PATH_STRIDE + channel * _CHANNEL_STRIDE
    return np.random.Generator(np.random.Philox(key=seed, counter=counter))


def power_drift(coef: float, exponent: float) -> Callable[[float], float]:
    """Scalar rate ``coef * t**exponent`` with the ``t=0`` value forced to 0.

    Negative exponents make the rate singular at the origin; pinning the
    left-endpoint evaluation at 0 keeps the first Euler step finite while
    preserving the divergence of the refinement sums away from it.
    """

    def rate(t: float) -> float:
        return 0.0 if t <= 0.0 else coef * t**exponent

    return rate


@dataclass(frozen=True)
class SemimartingaleModel:
    """Continuous-coefficient model ``dP = a(t) dt + sigma(t) dW``.

    ``drift`` maps time to the rate vector (n,), ``loadings`` maps time to
    the (n, D) driver loading matrix; both are evaluated at left endpoints.
    """

    labels: tuple[str, ...]
    initial: np.ndarray
    drift: Callable[[float], np.ndarray]
    loadings: Callable[[float], np.ndarray]
    drivers: int

    def __post_init__(self):
        object.__setattr__(self, "labels", tuple(str(x) for x in self.labels))
        init = np.asarray(self.initial, dtype=float)
        if init.shape != (len(self.labels),):
            raise ValueError("initial values must match the label count")
        object.__setattr__(self, "initial", init)

    @classmethod
    def constant(
        cls,
        labels: Sequence[str],
        initial: Sequence[float],
        drift: Sequence[float],
        loadings: np.ndarray,
    ) -> "SemimartingaleModel":
        a = np.asarray(drift, dtype=float).copy()
        sig = np.asarray(loadings, dtype=float).copy()
        n = len(labels)
        if a.shape != (n,) or sig.ndim != 2 or sig.shape[0] != n:
            raise ValueError("drift must be (n,) and loadings (n, D)")
        return cls(tuple(labels), initial, lambda t: a, lambda t: sig, sig.shape[1])

    @property
    def dim(self) -> int:
        return len(self.labels)

    def drift_increments(self, grid: TimeGrid) -> np.ndarray:
        """Left-endpoint drift increments a(t_k) dt_k, shape (K, n)."""
        out = np.empty((grid.steps, self.dim))
        for k, t in enumerate(grid.times[:-1]):
            out[k] = np.asarray(self.drift(float(t)), dtype=float)
        return out * grid.dt[:, None]

    def loading_stack(self, grid: TimeGrid) -> np.ndarray:
        """Left-endpoint loadings, shape (K, n, D)."""
        out = np.empty((grid.steps, self.dim, self.drivers))
        for k, t in enumerate(grid.times[:-1]):
            out[k] = np.asarray(self.loadings(float(t)), dtype=float)
        return out

    def kernel(self, grid: TimeGrid) -> StochasticAggregateKernel:
        """Model aggregate kernel ``dC_k = sigma_k sigma_k' dt_k``."""
        return from_model(grid, self.labels, self.loading_stack(grid))


@dataclass(frozen=True)
class PathEnsemble:
    """Simulated paths with their exact Doob–Meyer bookkeeping.

    ``drift_increments`` is (K, n) when the finite-variation part is shared
    by every path (time-only drift) or (N, K, n) for per-path predictable
    drift (bond-surface adapters).  ``P = P(0) + A + M`` holds bitwise since
    prices are *defined* as that sum.
    """

    grid: TimeGrid
    labels: tuple[str, ...]
    initial: np.ndarray
    drift_increments: np.ndarray
    mart_increments: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "labels", tuple(str(x) for x in self.labels))
        K, n = self.grid.steps, len(self.labels)
        dm = np.asarray(self.mart_increments, dtype=float)
        da = np.asarray(self.drift_increments, dtype=float)
        if dm.ndim != 3 or dm.shape[1:] != (K, n):
            raise ValueError(f"mart increments shape {dm.shape} != (N, {K}, {n})")
        if da.shape not in ((K, n), (dm.shape[0], K, n)):
            raise ValueError(f"drift increments shape {da.shape} incompatible")
        init = np.asarray(self.initial, dtype=float)
        if init.shape != (n,):
            raise ValueError("initial prices must match the label count")
        object.__setattr__(self, "mart_increments", dm)
        object.__setattr__(self, "drift_increments", da)
        object.__setattr__(self, "initial", init)

    @property
    def n_paths(self) -> int:
        return self.mart_increments.shape[0]

    @property
    def dim(self) -> int:
        return len(self.labels)

    def drift_increment_array(self) -> np.ndarray:
        """Drift increments broadcast to (N, K, n) without copying when shared."""
        if self.drift_increments.ndim == 2:
            return np.broadcast_to(
                self.drift_increments, (self.n_paths,) + self.drift_increments.shape
            )
        return self.drift_increments

    def price_increments(self) -> np.ndarray:
        """Per-step price increments dP = dA + dM, shape (N, K, n)."""
        return self.drift_increment_array() + self.mart_increments

    def drift_path(self) -> np.ndarray:
        """Cumulative finite-variation part A, shape (N, K+1, n), A(0)=0."""
        da = self.drift_increment_array()
        out = np.zeros((self.n_paths, self.grid.steps + 1, self.dim))
        np.cumsum(da, axis=1, out=out[:, 1:])
        return out

    def mart_path(self) -> np.ndarray:
        """Cumulative martingale part M, shape (N, K+1, n), M(0)=0."""
        out = np.zeros((self.n_paths, self.grid.steps + 1, self.dim))
        np.cumsum(self.mart_increments, axis=1, out=out[:, 1:])
        return out

    def prices(self) -> np.ndarray:
        """Price paths P = P(0) + A + M, shape (N, K+1, n)."""
        return self.initial[None, None, :] + self.drift_path() + self.mart_path()

    def terminal_prices(self) -> np.ndarray:
        da = self.drift_increment_array()
        return (
            self.initial[None, :]
            + da.sum(axis=1)
            + self.mart_increments.sum(axis=1)
        )

    def restrict(self, subset: Sequence[str]) -> "PathEnsemble":
        pos = {lab: i for i, lab in enumerate(self.labels)}
        idx = np.array([pos[str(s)] for s in subset], dtype=int)
        da = self.drift_increments
        da_sub = da[:, idx] if da.ndim == 2 else da[:, :, idx]
        return PathEnsemble(
            self.grid,
            tuple(str(s) for s in subset),
            self.initial[idx],
            da_sub,
            self.mart_increments[:, :, idx],
            self.seed,
        )


def simulate_ensemble(
    model: SemimartingaleModel,
    grid: TimeGrid,
    n_paths: int,
    seed: int,
    *,
    chunk_size: int = 4096,
) -> PathEnsemble:
    """Euler scheme with per-path counter-based driver streams."""
    if n_paths < 1:
        raise ValueError("need at least one path")
    K, n, D = grid.steps, model.dim, model.drivers
    sig = model.loading_stack(grid)
    sqrt_dt = np.sqrt(grid.dt)
    dm = np.empty((n_paths, K, n))
    z = np.empty((min(chunk_size, n_paths), K, D))
    for start in range(0, n_paths, chunk_size):
        stop = min(start + chunk_size, n_paths)
        block = z[: stop - start]
        for p in range(start, stop):
            block[p - start] = path_stream(seed, p).standard_normal((K, D))
        np.einsum("knd,pkd->pkn", sig, block, out=dm[start:stop])
        dm[start:stop] *= sqrt_dt[None, :, None]
    return PathEnsemble(
        grid=grid,
        labels=model.labels,
        initial=model.initial,
        drift_increments=model.drift_increments(grid),
        mart_increments=dm,
        seed=seed,
    )


def realized_covariation(ensemble: PathEnsemble) -> list[StochasticAggregateKernel]:
    """Per-path realized kernels dC = dP dP' (rank one per step).

    With drifting prices the realized increments carry the documented
    O(dt) cross-term bias relative to the martingale covariation.
    """
    return from_realized(ensemble)


def refine_grid(grid: TimeGrid, factor: int) -> TimeGrid:
    """Uniformly split every grid interval into ``factor`` pieces."""
    return grid.refine(factor)
