import numpy as np
import pytest

from covint.errors import (
    HorizonExceededError,
    MonotonicityError,
    NotInRangeError,
)
from covint.stoch_kernel import (
    IncrementFamily,
    StochasticAggregateKernel,
    TimeGrid,
    from_model,
    fv_metric,
    integrand_path,
    rc_metric,
    stoch_norm_sq,
    stoch_pairing,
    subset_sup_norm,
)


def brownian_kernel(steps=10, horizon=1.0):
    # single unit-loading driver: dC_k = dt_k
    grid = TimeGrid.uniform(horizon, steps)
    loadings = np.ones((steps, 1, 1))
    return grid, from_model(grid, ["w"], loadings)


def random_model_kernel(rng, n=3, drivers=3, steps=8, horizon=1.0):
    grid = TimeGrid.uniform(horizon, steps)
    sig = rng.standard_normal((steps, n, drivers))
    labels = [f"s{i}" for i in range(n)]
    return grid, from_model(grid, labels, sig)


class TestTimeGrid:
    def test_uniform(self):
        g = TimeGrid.uniform(2.0, 4)
        np.testing.assert_allclose(g.times, [0.0, 0.5, 1.0, 1.5, 2.0])
        assert g.steps == 4 and g.horizon == 2.0

    def test_must_start_at_zero(self):
        with pytest.raises(ValueError):
            TimeGrid(np.array([0.5, 1.0]))

    def test_must_increase(self):
        with pytest.raises(ValueError):
            TimeGrid(np.array([0.0, 1.0, 1.0]))

    def test_refine_doubles_steps(self):
        g = TimeGrid.uniform(1.0, 5)
        f = g.refine(2)
        assert f.steps == 10
        np.testing.assert_allclose(f.times[::2], g.times)

    def test_index_at_or_before(self):
        g = TimeGrid.uniform(3.0, 6)
        assert g.index_at_or_before(1.0) == 2
        assert g.index_at_or_before(2.9) == 5
        assert g.index_at_or_before(99.0) == 6


class TestModelKernel:
    def test_brownian_diagonal_matches_time(self):
        # independent unit drivers: aggregate C_ii(t) = t on the grid
        grid = TimeGrid.uniform(1.0, 8)
        sig = np.broadcast_to(np.eye(2), (8, 2, 2)).copy()
        sak = from_model(grid, ["a", "b"], sig)
        agg = sak.aggregate()
        np.testing.assert_allclose(agg[:, 0, 0], grid.times, atol=1e-15)
        np.testing.assert_allclose(agg[:, 0, 1], 0.0, atol=1e-15)

    def test_psd_validation_helper(self):
        rng = np.random.default_rng(0)
        _, sak = random_model_kernel(rng)
        sak.validate_psd()

    def test_restrict_is_submatrix(self):
        rng = np.random.default_rng(1)
        _, sak = random_model_kernel(rng, n=3)
        sub = sak.restrict(["s2", "s0"])
        np.testing.assert_array_equal(sub.increments[:, 0, 1], sak.increments[:, 2, 0])


class TestStochNorm:
    def test_unit_integrand_against_brownian(self):
        # dF = 1 * dC: cumulative squared norm equals elapsed time exactly
        grid, sak = brownian_kernel()
        fam = IncrementFamily(("w",), grid.dt[:, None].copy())
        path = stoch_norm_sq(sak, fam)
        np.testing.assert_allclose(path, grid.times, rtol=1e-12)

    def test_realized_rank_one_counts_steps(self):
        # F = price increments themselves: per-step norm is exactly 1
        rng = np.random.default_rng(2)
        grid = TimeGrid.uniform(1.0, 6)
        v = rng.standard_normal(6)
        dP = np.column_stack([v, 2.0 * v])
        inc = np.einsum("ki,kj->kij", dP, dP)
        sak = StochasticAggregateKernel(grid, ("a", "b"), inc)
        fam = IncrementFamily(("a", "b"), dP)
        path = stoch_norm_sq(sak, fam)
        np.testing.assert_allclose(path, np.arange(7, dtype=float), atol=1e-9)

    def test_transverse_family_is_infinite(self):
        rng = np.random.default_rng(3)
        grid = TimeGrid.uniform(1.0, 6)
        v = rng.standard_normal(6)
        dP = np.column_stack([v, 2.0 * v])
        inc = np.einsum("ki,kj->kij", dP, dP)
        sak = StochasticAggregateKernel(grid, ("a", "b"), inc)
        bad = IncrementFamily(("a", "b"), np.column_stack([v, -2.0 * v]))
        path = stoch_norm_sq(sak, bad)
        assert path[0] == 0.0 and np.all(np.isinf(path[1:]))

    def test_zero_family(self):
        grid, sak = brownian_kernel()
        fam = IncrementFamily(("w",), np.zeros((grid.steps, 1)))
        np.testing.assert_array_equal(stoch_norm_sq(sak, fam), np.zeros(grid.steps + 1))


class TestIntegrand:
    def test_recovers_known_coefficients(self):
        rng = np.random.default_rng(4)
        grid, sak = random_model_kernel(rng)
        theta = rng.standard_normal((grid.steps, sak.dim))
        df = np.einsum("kij,kj->ki", sak.increments, theta)
        fam = IncrementFamily(sak.labels, df)
        got = integrand_path(sak, fam)
        # full-rank increments: theta is unique
        np.testing.assert_allclose(got, theta, rtol=1e-7, atol=1e-9)

    def test_solves_per_step(self):
        rng = np.random.default_rng(5)
        grid, sak = random_model_kernel(rng, n=4, drivers=2)  # rank deficient
        theta = rng.standard_normal((grid.steps, 4))
        df = np.einsum("kij,kj->ki", sak.increments, theta)
        fam = IncrementFamily(sak.labels, df)
        got = integrand_path(sak, fam)
        recon = np.einsum("kij,kj->ki", sak.increments, got)
        np.testing.assert_allclose(recon, df, rtol=1e-8, atol=1e-10)

    def test_out_of_range_raises(self):
        rng = np.random.default_rng(6)
        grid, sak = random_model_kernel(rng, n=3, drivers=1)
        fam = IncrementFamily(sak.labels, rng.standard_normal((grid.steps, 3)))
        with pytest.raises(NotInRangeError) as ei:
            integrand_path(sak, fam)
        assert ei.value.code == "NOT_IN_RC"
        assert ei.value.context["step"] == 0


class TestPairing:
    def test_reproduces_column_pairing(self):
        # pairing of a kernel column family with F recovers F's component
        rng = np.random.default_rng(7)
        grid, sak = random_model_kernel(rng)
        theta = rng.standard_normal((grid.steps, sak.dim))
        df = np.einsum("kij,kj->ki", sak.increments, theta)
        fam = IncrementFamily(sak.labels, df)
        col = sak.column_family("s1")
        pairing = stoch_pairing(sak, col, fam)
        np.testing.assert_allclose(pairing, fam.path()[:, 1], rtol=1e-8, atol=1e-10)

    def test_symmetry(self):
        rng = np.random.default_rng(8)
        grid, sak = random_model_kernel(rng)
        a = np.einsum("kij,kj->ki", sak.increments, rng.standard_normal((grid.steps, 3)))
        b = np.einsum("kij,kj->ki", sak.increments, rng.standard_normal((grid.steps, 3)))
        fa = IncrementFamily(sak.labels, a)
        fb = IncrementFamily(sak.labels, b)
        np.testing.assert_allclose(
            stoch_pairing(sak, fa, fb), stoch_pairing(sak, fb, fa), rtol=1e-7, atol=1e-9
        )

    def test_polarization(self):
        rng = np.random.default_rng(9)
        grid, sak = random_model_kernel(rng)
        a = np.einsum("kij,kj->ki", sak.increments, rng.standard_normal((grid.steps, 3)))
        b = np.einsum("kij,kj->ki", sak.increments, rng.standard_normal((grid.steps, 3)))
        fa = IncrementFamily(sak.labels, a)
        fb = IncrementFamily(sak.labels, b)
        plus = stoch_norm_sq(sak, IncrementFamily(sak.labels, a + b))
        minus = stoch_norm_sq(sak, IncrementFamily(sak.labels, a - b))
        np.testing.assert_allclose(
            stoch_pairing(sak, fa, fb), 0.25 * (plus - minus), rtol=1e-7, atol=1e-9
        )

    def test_cauchy_schwarz(self):
        rng = np.random.default_rng(10)
        grid, sak = random_model_kernel(rng)
        a = np.einsum("kij,kj->ki", sak.increments, rng.standard_normal((grid.steps, 3)))
        b = np.einsum("kij,kj->ki", sak.increments, rng.standard_normal((grid.steps, 3)))
        fa = IncrementFamily(sak.labels, a)
        fb = IncrementFamily(sak.labels, b)
        lhs = abs(stoch_pairing(sak, fa, fb)[-1])
        rhs = np.sqrt(stoch_norm_sq(sak, fa)[-1] * stoch_norm_sq(sak, fb)[-1])
        assert lhs <= rhs * (1 + 1e-10)

    def test_out_of_range_second_argument(self):
        rng = np.random.default_rng(11)
        grid, sak = random_model_kernel(rng, n=3, drivers=1)
        good = IncrementFamily(
            sak.labels,
            np.einsum("kij,kj->ki", sak.increments, rng.standard_normal((grid.steps, 3))),
        )
        bad = IncrementFamily(sak.labels, rng.standard_normal((grid.steps, 3)))
        with pytest.raises(NotInRangeError):
            stoch_pairing(sak, good, bad)


class TestMetrics:
    def test_fv_metric_saturated_path(self):
        # variation 2 reached before t=1 and flat after: every term clips to 1
        grid = TimeGrid.uniform(3.0, 30)
        path = np.minimum(2.0 * grid.times / grid.times[10], 2.0)
        m = fv_metric(grid, path)
        assert m.value == pytest.approx(1.0 - 2.0**-3, rel=1e-12)
        assert m.standard_error == 0.0

    def test_fv_metric_zero_path(self):
        grid = TimeGrid.uniform(2.0, 10)
        m = fv_metric(grid, np.zeros(11))
        assert m.value == 0.0

    def test_fv_metric_horizon_guard(self):
        grid = TimeGrid.uniform(2.0, 10)
        with pytest.raises(HorizonExceededError) as ei:
            fv_metric(grid, np.zeros(11), k_max=5)
        assert ei.value.code == "HORIZON_EXCEEDED"

    def test_rc_metric_identical_families(self):
        rng = np.random.default_rng(12)
        grid, sak = random_model_kernel(rng, steps=12, horizon=2.0)
        df = np.einsum("kij,kj->ki", sak.increments, rng.standard_normal((grid.steps, 3)))
        fam = IncrementFamily(sak.labels, df)
        m = rc_metric(sak, fam, fam)
        assert m.value == 0.0

    def test_rc_metric_detects_difference(self):
        rng = np.random.default_rng(13)
        grid, sak = random_model_kernel(rng, steps=12, horizon=2.0)
        df = np.einsum("kij,kj->ki", sak.increments, rng.standard_normal((grid.steps, 3)))
        fam = IncrementFamily(sak.labels, df)
        other = IncrementFamily(sak.labels, 2.0 * df)
        assert rc_metric(sak, fam, other).value > 0.0

    def test_rc_metric_tolerates_rounding_noise(self):
        # families equal up to eps-level noise inside the range measure ~0
        rng = np.random.default_rng(14)
        grid, sak = random_model_kernel(rng, steps=12, horizon=2.0)
        df = np.einsum("kij,kj->ki", sak.increments, rng.standard_normal((grid.steps, 3)))
        noisy = df * (1.0 + 1e-15 * rng.standard_normal(df.shape))
        m = rc_metric(sak, IncrementFamily(sak.labels, df), IncrementFamily(sak.labels, noisy))
        assert m.value <= 1e-10


class TestSubsetSupNorm:
    def test_monotone_exhaustion(self):
        rng = np.random.default_rng(15)
        grid, sak = random_model_kernel(rng, n=4, drivers=4)
        theta = rng.standard_normal((grid.steps, 4))
        fam = IncrementFamily(sak.labels, np.einsum("kij,kj->ki", sak.increments, theta))
        chain = [sak.labels[: j + 1] for j in range(4)]
        res = subset_sup_norm(sak, fam, chain)
        diffs = np.diff(res.norm_sq_paths, axis=0)
        assert np.all(diffs >= -1e-9 * (1 + np.abs(res.norm_sq_paths[1:])))
        np.testing.assert_allclose(res.final, stoch_norm_sq(sak, fam), rtol=1e-12)

    def test_non_nested_rejected(self):
        rng = np.random.default_rng(16)
        grid, sak = random_model_kernel(rng, n=3)
        fam = IncrementFamily(sak.labels, np.zeros((grid.steps, 3)))
        with pytest.raises(ValueError):
            subset_sup_norm(sak, fam, [["s0"], ["s1"]])

    def test_certificate_breach_raises(self):
        rng = np.random.default_rng(17)
        grid, sak = random_model_kernel(rng, n=3)
        theta = rng.standard_normal((grid.steps, 3))
        fam = IncrementFamily(sak.labels, np.einsum("kij,kj->ki", sak.increments, theta))
        chain = [sak.labels[:1], sak.labels]
        with pytest.raises(MonotonicityError) as ei:
            subset_sup_norm(sak, fam, chain, tol=-1.0)
        assert ei.value.code == "MONOTONICITY_VIOLATION"

    def test_escalation_to_infinity_is_monotone(self):
        # transverse family: finite on the singleton, +inf once both labels
        # enter (the restriction norms increase, all the way to infinity)
        rng = np.random.default_rng(18)
        grid = TimeGrid.uniform(1.0, 5)
        v = rng.standard_normal(5)
        dP = np.column_stack([v, 2.0 * v])
        sak = StochasticAggregateKernel(
            grid, ("a", "b"), np.einsum("ki,kj->kij", dP, dP)
        )
        bad = IncrementFamily(("a", "b"), np.column_stack([v, -2.0 * v]))
        res = subset_sup_norm(sak, bad, [["a"], ["a", "b"]])
        assert np.all(np.isfinite(res.norm_sq_paths[0]))
        assert np.all(np.isinf(res.norm_sq_paths[1][1:]))
