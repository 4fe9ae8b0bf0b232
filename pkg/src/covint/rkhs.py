r"""Finite-dimensional reproducing-kernel Hilbert space built from a PSD matrix.

A symmetric positive-semidefinite matrix ``c`` indexed by a finite label set
``I`` spans the space ``R(c) = {c @ theta}`` of its column combinations, with
inner product

    <f, h>_c = theta_f' c theta_h = sum_i theta_f[i] * h[i],

independent of the representing coefficients.  Columns reproduce evaluations:
``<c[:, i], f>_c = f[i]``.  Vectors outside the column span are assigned norm
``+inf``, which is exactly the membership signal downstream modules rely on.

Two independent routes to the squared norm are exposed:

``spectral_norm``
    eigendecomposition oracle: sum of ``<u_j, f>^2 / lambda_j`` over retained
    modes, with an explicit null-component membership test.

``norm_via_limit``
    the regularized-solve algorithm: ``q_n = <(c + id/n)^{-1} f, f>``
    increases monotonically to ``||f||_c^2`` (finite iff ``f`` is in the
    span; divergence is linear in ``n`` with slope equal to the squared
    null-space component).  Note this is *not* Tikhonov smoothing of
    ``c theta = f`` — the Tikhonov/pseudo-inverse solution converges for
    every ``f`` and cannot detect membership.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    AsymmetricKernelError,
    InconclusiveLimitError,
    NotInRkhsError,
    NotPositiveSemidefiniteError,
    SolveFailedError,
)

__all__ = [
    "Kernel",
    "KernelSpectrum",
    "NormResult",
    "validate_kernel",
    "spectral_norm",
    "regularized_coefficients",
    "norm_via_limit",
    "default_schedule",
    "inner_product",
    "project",
    "subset_norm_profile",
]

#: relative symmetry tolerance for validation
SYMMETRY_TOL = 1.0e-12
#: relative negative-eigenvalue tolerance for validation
PSD_TOL = 1.0e-10
#: relative membership tolerance: null components above MEMBERSHIP_TOL * scale
#: mark a vector as lying outside the column span
MEMBERSHIP_TOL = 1.0e-8
#: relative residual tolerance for coefficient solves
SOLVE_TOL = 1.0e-8
#: successive profile values growing by more than this factor at the two
#: largest schedule levels are declared divergent (norm +inf)
DIVERGENCE_RATIO = 1.5
#: relative settling tolerance for the regularization profile
CONVERGENCE_TOL = 1.0e-6


def _as_labels(labels: Iterable[str] | None, n: int) -> tuple[str, ...]:
    if labels is None:
        return tuple(str(i) for i in range(n))
    out = tuple(str(x) for x in labels)
    if len(out) != n:
        raise ValueError(f"expected {n} labels, got {len(out)}")
    if len(set(out)) != len(out):
        raise ValueError("labels must be unique")
    return out


@dataclass(frozen=True)
class Kernel:
    """Validated symmetric PSD matrix over a finite label set.

    Construct through :func:`validate_kernel`; the dataclass itself performs
    no checks.
    """

    labels: tuple[str, ...]
    matrix: np.ndarray

    @property
    def dim(self) -> int:
        return len(self.labels)

    def indices(self, subset: Sequence[str]) -> np.ndarray:
        """Map a label subset to integer positions (order-preserving)."""
        pos = {lab: i for i, lab in enumerate(self.labels)}
        missing = [lab for lab in subset if str(lab) not in pos]
        if missing:
            raise KeyError(f"labels not in kernel: {missing}")
        idx = np.array([pos[str(lab)] for lab in subset], dtype=int)
        if len(set(idx.tolist())) != len(idx):
            raise ValueError("subset labels must be distinct")
        return idx

    def column(self, label: str) -> np.ndarray:
        """Kernel column ``c[:, label]`` (the representer of evaluation)."""
        (j,) = self.indices([label])
        return self.matrix[:, j].copy()

    def restrict(self, subset: Sequence[str]) -> "Kernel":
        """Sub-kernel ``c[J, J]`` on a label subset ``J``."""
        idx = self.indices(subset)
        sub = self.matrix[np.ix_(idx, idx)]
        return Kernel(tuple(str(lab) for lab in subset), sub)


def validate_kernel(
    matrix: np.ndarray,
    labels: Iterable[str] | None = None,
    *,
    symmetry_tol: float = SYMMETRY_TOL,
    psd_tol: float = PSD_TOL,
) -> Kernel:
    """Validate a candidate kernel matrix and wrap it.

    Raises
    ------
    AsymmetricKernelError
        if ``|c - c'|`` exceeds ``symmetry_tol`` relative to the entry scale.
    NotPositiveSemidefiniteError
        if the smallest eigenvalue is below ``-psd_tol * lambda_max``.
    ValueError
        for non-square or non-finite input.
    """
    m = np.asarray(matrix, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"kernel must be square, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("kernel entries must be finite")
    labs = _as_labels(labels, m.shape[0])
    scale = float(np.max(np.abs(m))) if m.size else 0.0
    gap = float(np.max(np.abs(m - m.T))) if m.size else 0.0
    if gap > symmetry_tol * max(scale, 1.0):
        raise AsymmetricKernelError(
            f"matrix asymmetric: max|c - c'| = {gap:.3e} at scale {scale:.3e}",
            gap=gap,
            scale=scale,
        )
    sym = 0.5 * (m + m.T)
    eigvals = np.linalg.eigvalsh(sym)
    lam_max = float(eigvals[-1]) if eigvals.size else 0.0
    lam_min = float(eigvals[0]) if eigvals.size else 0.0
    if lam_min < -psd_tol * max(lam_max, 1.0):
        raise NotPositiveSemidefiniteError(
            f"eigenvalue {lam_min:.3e} below tolerance (lambda_max={lam_max:.3e})",
            lambda_min=lam_min,
            lambda_max=lam_max,
        )
    return Kernel(labs, sym)


class KernelSpectrum:
    """Eigendecomposition of a kernel with a numerical-rank cutoff.

    Modes with ``lambda_j <= dim * eps * lambda_max`` are treated as exactly
    zero; components of a vector along those modes decide membership.
    """

    def __init__(self, kernel: Kernel, *, rank_rtol: float | None = None):
        self.kernel = kernel
        m = kernel.matrix
        eigvals, eigvecs = np.linalg.eigh(m)
        self.eigenvalues = eigvals
        self.eigenvectors = eigvecs
        lam_max = float(eigvals[-1]) if eigvals.size else 0.0
        if rank_rtol is None:
            rank_rtol = kernel.dim * np.finfo(float).eps
        self.rank_rtol = rank_rtol
        self.cutoff = rank_rtol * max(lam_max, 0.0)
        self.retained = eigvals > self.cutoff
        self.rank = int(np.count_nonzero(self.retained))

    def components(self, f: np.ndarray) -> np.ndarray:
        return self.eigenvectors.T @ f

    def null_residual(self, f: np.ndarray) -> float:
        """Largest |component| of ``f`` along clipped (null) modes."""
        comps = self.components(f)
        clipped = comps[~self.retained]
        return float(np.max(np.abs(clipped))) if clipped.size else 0.0

    def is_member(
        self,
        f: np.ndarray,
        *,
        scale: float | None = None,
        membership_tol: float = MEMBERSHIP_TOL,
    ) -> bool:
        if scale is None:
            scale = float(np.linalg.norm(f))
        if scale == 0.0:
            return bool(np.all(f == 0.0))
        return self.null_residual(f) <= membership_tol * scale

    def pseudo_solve(self, f: np.ndarray) -> np.ndarray:
        """Minimal-norm ``theta`` with ``c theta = (range projection of f)``."""
        comps = self.components(f)
        coef = np.zeros_like(comps)
        coef[self.retained] = comps[self.retained] / self.eigenvalues[self.retained]
        return self.eigenvectors @ coef

    def norm_sq(
        self,
        f: np.ndarray,
        *,
        scale: float | None = None,
        membership_tol: float = MEMBERSHIP_TOL,
    ) -> float:
        """Squared kernel norm; ``+inf`` when membership fails."""
        if not self.is_member(f, scale=scale, membership_tol=membership_tol):
            return float("inf")
        comps = self.components(f)
        kept = comps[self.retained]
        if kept.size == 0:
            return 0.0
        return float(np.sum(kept * kept / self.eigenvalues[self.retained]))


@dataclass(frozen=True)
class NormResult:
    """Outcome of a norm computation.

    ``value`` is the kernel *norm* (not its square) and may be ``+inf``;
    ``coefficients`` are present exactly when the value is finite and then
    satisfy ``c @ coefficients = f`` within :data:`SOLVE_TOL`.
    """

    value: float
    coefficients: np.ndarray | None
    diagnostics: dict = field(default_factory=dict)

    @property
    def finite(self) -> bool:
        return bool(np.isfinite(self.value))


def spectral_norm(kernel: Kernel, f: np.ndarray) -> NormResult:
    """Norm of ``f`` in ``R(c)`` via the eigendecomposition route."""
    f = np.asarray(f, dtype=float)
    if f.shape != (kernel.dim,):
        raise ValueError(f"vector shape {f.shape} does not match kernel dim {kernel.dim}")
    spec = KernelSpectrum(kernel)
    nsq = spec.norm_sq(f)
    diag = {
        "rank": spec.rank,
        "cutoff": spec.cutoff,
        "null_residual": spec.null_residual(f),
    }
    if not np.isfinite(nsq):
        return NormResult(float("inf"), None, diag)
    return NormResult(float(np.sqrt(nsq)), spec.pseudo_solve(f), diag)


def regularized_coefficients(kernel: Kernel, f: np.ndarray, n: float) -> np.ndarray:
    """Solve ``(c + id/n) theta = f`` for the regularization level ``n > 0``.

    This is the workhorse of the limit route; the solution always exists
    because the shifted matrix is positive definite.  Raises
    :class:`SolveFailedError` when the numerical solve loses all accuracy
    (pathological input scales).
    """
    if not n > 0:
        raise ValueError("regularization level n must be positive")
    f = np.asarray(f, dtype=float)
    m = kernel.matrix + np.eye(kernel.dim) / n
    try:
        theta = np.linalg.solve(m, f)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - defensive
        raise SolveFailedError(f"regularized solve failed at n={n:g}: {exc}", n=n) from exc
    residual = float(np.linalg.norm(m @ theta - f))
    floor = float(np.linalg.norm(f) + np.abs(m).max() * np.linalg.norm(theta))
    if residual > 1.0e-6 * max(floor, 1.0):
        raise SolveFailedError(
            f"regularized solve residual {residual:.3e} at n={n:g} exceeds cap",
            n=n,
            residual=residual,
        )
    return theta


def default_schedule(levels: int = 13, base: float = 10.0) -> np.ndarray:
    """Geometric regularization schedule ``base**0 .. base**(levels-1)``."""
    return base ** np.arange(levels, dtype=float)


def norm_via_limit(
    kernel: Kernel,
    f: np.ndarray,
    schedule: np.ndarray | None = None,
    *,
    divergence_ratio: float = DIVERGENCE_RATIO,
    convergence_tol: float = CONVERGENCE_TOL,
) -> NormResult:
    """Norm of ``f`` via the monotone limit of ``<(c + id/n)^{-1} f, f>``.

    The profile over the schedule is analyzed for settling (limit reached)
    versus linear divergence (``f`` outside the span).  Divergence is declared
    when the profile grows by more than ``divergence_ratio`` at each of the
    two largest levels; settling when the final relative increment falls
    below ``convergence_tol``.  Anything in between raises
    :class:`InconclusiveLimitError` — the schedule did not separate the two
    regimes and the caller should extend it rather than trust a guess.
    """
    f = np.asarray(f, dtype=float)
    if f.shape != (kernel.dim,):
        raise ValueError(f"vector shape {f.shape} does not match kernel dim {kernel.dim}")
    if schedule is None:
        schedule = default_schedule()
    schedule = np.asarray(schedule, dtype=float)
    if schedule.size < 3 or np.any(np.diff(schedule) <= 0) or schedule[0] <= 0:
        raise ValueError("schedule must be at least 3 strictly increasing positive levels")

    profile = np.empty(schedule.size)
    theta = None
    for i, n in enumerate(schedule):
        theta = regularized_coefficients(kernel, f, float(n))
        profile[i] = float(theta @ f)

    diag = {"schedule": schedule, "profile": profile}
    tail = profile[-3:]
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(tail[:-1] > 0, tail[1:] / tail[:-1], np.inf)
    diag["tail_ratios"] = ratios

    increment = profile[-1] - profile[-2]
    if increment <= convergence_tol * (1.0 + abs(profile[-1])):
        value_sq = max(profile[-1], 0.0)
        return NormResult(float(np.sqrt(value_sq)), theta, diag)
    if np.all(ratios > divergence_ratio):
        return NormResult(float("inf"), None, diag)
    raise InconclusiveLimitError(
        "regularization profile neither settled nor diverged; extend the schedule",
        profile=profile.tolist(),
        schedule=schedule.tolist(),
    )


def inner_product(kernel: Kernel, f: np.ndarray, h: np.ndarray) -> float:
    """Inner product ``<f, h>_c = theta_f . h`` for members of ``R(c)``.

    Raises :class:`NotInRkhsError` if either argument fails membership.
    """
    f = np.asarray(f, dtype=float)
    h = np.asarray(h, dtype=float)
    spec = KernelSpectrum(kernel)
    for name, vec in (("f", f), ("h", h)):
        if vec.shape != (kernel.dim,):
            raise ValueError(f"vector {name} shape {vec.shape} != kernel dim {kernel.dim}")
        if not spec.is_member(vec):
            raise NotInRkhsError(
                f"argument {name} lies outside the kernel column span",
                argument=name,
                null_residual=spec.null_residual(vec),
            )
    return float(spec.pseudo_solve(f) @ h)


def project(kernel: Kernel, f: np.ndarray, subset: Sequence[str]) -> np.ndarray:
    """Project ``f`` onto the span of the kernel columns indexed by ``subset``.

    Returns the unique ``h`` in that span with ``h[J] = f[J]``; it is the
    orthogonal projection and satisfies the restriction isometry
    ``||h||_c = ||f[J]||_{c[J,J]}``.
    """
    f = np.asarray(f, dtype=float)
    if f.shape != (kernel.dim,):
        raise ValueError(f"vector shape {f.shape} does not match kernel dim {kernel.dim}")
    spec = KernelSpectrum(kernel)
    if not spec.is_member(f):
        raise NotInRkhsError(
            "cannot project: f lies outside the kernel column span",
            null_residual=spec.null_residual(f),
        )
    idx = kernel.indices(subset)
    if idx.size == 0:
        raise ValueError("subset must be nonempty")
    sub_spec = KernelSpectrum(kernel.restrict(subset))
    f_j = f[idx]
    if not sub_spec.is_member(f_j):
        raise NotInRkhsError(
            "restricted vector outside restricted-kernel span",
            subset=list(subset),
        )
    theta_j = sub_spec.pseudo_solve(f_j)
    return kernel.matrix[:, idx] @ theta_j


def subset_norm_profile(
    kernel: Kernel, f: np.ndarray, chain: Sequence[Sequence[str]]
) -> np.ndarray:
    """Restriction norms ``||f[J]||_{c[J,J]}`` along a nested chain of subsets.

    The chain must be nested (each subset contained in the next); the returned
    values are then nondecreasing, and when the final subset is the full label
    set the last value equals ``spectral_norm(kernel, f)``.  Values may be
    ``+inf`` — that is how progressive membership failure shows up.
    """
    f = np.asarray(f, dtype=float)
    if not chain:
        raise ValueError("chain must contain at least one subset")
    previous: set[str] = set()
    for j, subset in enumerate(chain):
        current = {str(lab) for lab in subset}
        if j > 0 and not previous.issubset(current):
            raise ValueError(f"chain not nested at position {j}")
        previous = current
    values = np.empty(len(chain))
    for j, subset in enumerate(chain):
        idx = kernel.indices(subset)
        sub = kernel.restrict(subset)
        values[j] = KernelSpectrum(sub).norm_sq(f[idx])
    return np.sqrt(values)
