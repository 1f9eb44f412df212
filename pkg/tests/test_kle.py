"""Karhunen-Loeve decomposition: kernels, Fredholm solve, mode selection."""
import numpy as np
import pytest

from oracles import ConstantKernel, ou_kle_eigenvalues
from stochpce import (
    SIGMA_X,
    SIGMA_Z,
    DegenerateModeError,
    DimensionMismatchError,
    KernelNotPositiveError,
    NumericalConsistencyError,
    OrnsteinUhlenbeckKernel,
    TabulatedKernel,
    TruncatedKLE,
    reconstruct_covariance,
    select_modes,
    solve_fredholm,
)
from stochpce.kle import (
    QuadratureGrid,
    cumulative_rates,
    default_candidate_count,
    evaluate_mode,
    sample_from_kle,
    scaled_modes_matrix,
    transition_rate,
)


class TestKernels:
    def test_ou_values(self):
        kernel = OrnsteinUhlenbeckKernel(alpha=3.0, tau_c=10.0)
        assert kernel.variance == pytest.approx(9.0)
        assert kernel.at_lag(0.0) == pytest.approx(9.0)
        assert kernel.at_lag(10.0) == pytest.approx(9.0 * np.exp(-1.0))
        lags = np.array([0.0, 1.0, 2.0])
        np.testing.assert_allclose(kernel.at_lag(lags),
                                   9.0 * np.exp(-lags / 10.0))

    def test_ou_rejects_bad_parameters(self):
        with pytest.raises(ValueError):
            OrnsteinUhlenbeckKernel(alpha=1.0, tau_c=0.0)
        with pytest.raises(ValueError):
            OrnsteinUhlenbeckKernel(alpha=float("inf"), tau_c=1.0)
        # a negative amplitude is legal: only alpha^2 enters the kernel
        assert OrnsteinUhlenbeckKernel(alpha=-2.0, tau_c=1.0).variance == 4.0

    def test_tabulated_interpolates(self):
        spacing = 0.01
        lags = np.arange(0, 301) * spacing
        table = 4.0 * np.exp(-lags / 10.0)
        kernel = TabulatedKernel(values=table, spacing=spacing)
        assert kernel.variance == pytest.approx(4.0)
        probe = np.array([0.005, 0.5, 2.995])
        np.testing.assert_allclose(kernel.at_lag(probe),
                                   4.0 * np.exp(-probe / 10.0), rtol=1e-4)

    def test_tabulated_rejects_peak_violation(self):
        with pytest.raises(KernelNotPositiveError):
            TabulatedKernel(values=np.array([1.0, 2.0]), spacing=0.1)

    def test_tabulated_extends_past_table(self):
        kernel = TabulatedKernel(values=np.array([1.0, 0.5, 0.25]), spacing=1.0)
        assert kernel.at_lag(50.0) == pytest.approx(0.25)


class TestQuadratureGrid:
    def test_trapezoid_weights(self):
        grid = QuadratureGrid.trapezoid(2.0, 5)
        np.testing.assert_allclose(grid.nodes, np.linspace(0.0, 2.0, 5))
        np.testing.assert_allclose(grid.weights, [0.25, 0.5, 0.5, 0.5, 0.25])
        assert grid.weights.sum() == pytest.approx(2.0)
        assert grid.size == 5
        assert grid.span == pytest.approx(2.0)

    def test_rejects_tiny_grid(self):
        with pytest.raises(ValueError):
            QuadratureGrid.trapezoid(1.0, 1)


class TestFredholmSolve:
    @pytest.mark.parametrize("tau_c", [0.1, 10.0])
    def test_top_eigenvalues_match_transcendental_roots(self, tau_c):
        """Numerical spectrum vs the exact exponential-kernel eigenvalues.

        The closed-form eigenvalues come from the roots of the standard
        transcendental equations for the exponential covariance on an
        interval, solved to machine precision by bracketed bisection.
        """
        modes = solve_fredholm(OrnsteinUhlenbeckKernel(1.0, tau_c), tau=1.0,
                               grid_size=400, n_modes=8)
        numeric = np.array([m.eigenvalue for m in modes])
        analytic = ou_kle_eigenvalues(1.0, tau_c, 1.0, 8)
        # leading modes: strict per-mode agreement
        for k in range(3):
            assert abs(numeric[k] - analytic[k]) / analytic[k] < 1e-4
        # full head of the spectrum: relative to the dominant scale
        np.testing.assert_allclose(numeric, analytic,
                                   atol=1e-4 * analytic[0], rtol=0)

    def test_trace_identity(self):
        """sum of all eigenvalues equals the quadrature of C(t, t)."""
        kernel = OrnsteinUhlenbeckKernel(1.3, 0.7)
        modes = solve_fredholm(kernel, tau=1.0, grid_size=200)
        total = sum(m.eigenvalue for m in modes)
        assert total == pytest.approx(kernel.variance * 1.0, rel=1e-8)

    def test_modes_orthonormal(self):
        modes = solve_fredholm(OrnsteinUhlenbeckKernel(1.0, 1.0), tau=1.0,
                               grid_size=150, n_modes=8)
        grid = modes[0].grid
        for a in range(8):
            for b in range(8):
                overlap = np.sum(grid.weights * modes[a].values * modes[b].values)
                assert overlap == pytest.approx(1.0 if a == b else 0.0, abs=1e-9)

    def test_sign_convention(self):
        """Nonnegative integral, or first sample nonnegative for odd modes."""
        modes = solve_fredholm(OrnsteinUhlenbeckKernel(1.0, 10.0), tau=1.0,
                               grid_size=200, n_modes=8)
        for mode in modes:
            total = np.sum(mode.grid.weights * mode.values)
            assert total > 1e-8 or (abs(total) <= 1e-8 and mode.values[0] >= 0)

    def test_descending_order_and_indices(self):
        modes = solve_fredholm(OrnsteinUhlenbeckKernel(2.0, 5.0), tau=1.0,
                               grid_size=120, n_modes=6)
        eigs = [m.eigenvalue for m in modes]
        assert eigs == sorted(eigs, reverse=True)
        assert [m.index for m in modes] == [1, 2, 3, 4, 5, 6]

    def test_rejects_bad_mode_count(self):
        with pytest.raises(ValueError):
            solve_fredholm(OrnsteinUhlenbeckKernel(1.0, 1.0), tau=1.0,
                           grid_size=50, n_modes=51)

    def test_constant_kernel_is_rank_one(self):
        modes = solve_fredholm(ConstantKernel(0.5), tau=1.0, grid_size=80)
        assert modes[0].eigenvalue == pytest.approx(0.25 * 1.0, rel=1e-12)
        assert not modes[0].is_null()
        assert all(m.is_null() for m in modes[1:])
        # the one live mode is the constant function 1/sqrt(tau)
        np.testing.assert_allclose(modes[0].values, 1.0, atol=1e-10)


class TestModeEvaluation:
    def setup_method(self):
        self.kernel = OrnsteinUhlenbeckKernel(1.0, 2.0)
        self.modes = solve_fredholm(self.kernel, tau=1.0, grid_size=200,
                                    n_modes=4)

    def test_nystrom_exact_at_nodes(self):
        mode = self.modes[0]
        np.testing.assert_allclose(
            evaluate_mode(mode, self.kernel, mode.grid.nodes),
            mode.values, atol=1e-10)

    def test_nystrom_scalar_and_midpoint(self):
        mode = self.modes[1]
        mid = 0.5 * (mode.grid.nodes[10] + mode.grid.nodes[11])
        value = evaluate_mode(mode, self.kernel, mid)
        assert isinstance(value, float)
        lo, hi = sorted((mode.values[10], mode.values[11]))
        assert lo - 1e-3 <= value <= hi + 1e-3

    def test_null_mode_rejected(self):
        null_mode = solve_fredholm(ConstantKernel(1.0), tau=1.0,
                                   grid_size=60)[5]
        with pytest.raises(DegenerateModeError):
            evaluate_mode(null_mode, ConstantKernel(1.0), 0.3)

    def test_scaled_matrix_zeroes_null_modes(self):
        kernel = ConstantKernel(1.0)
        modes = solve_fredholm(kernel, tau=1.0, grid_size=60, n_modes=4)
        times = np.linspace(0.0, 1.0, 7)
        scaled = scaled_modes_matrix(modes, kernel, times)
        assert scaled.shape == (4, 7)
        np.testing.assert_allclose(scaled[0], 1.0, atol=1e-9)
        np.testing.assert_allclose(scaled[1:], 0.0, atol=0)


class TestReconstruction:
    def test_full_solve_reproduces_kernel(self):
        kernel = OrnsteinUhlenbeckKernel(1.0, 1.0)
        modes = solve_fredholm(kernel, tau=1.0, grid_size=150)
        rebuilt = reconstruct_covariance(modes)
        t = modes[0].grid.nodes
        exact = kernel.at_lag(np.abs(t[:, None] - t[None, :]))
        assert np.max(np.abs(rebuilt - exact)) < 1e-6

    def test_truncation_shows_in_covariance(self):
        kernel = OrnsteinUhlenbeckKernel(1.0, 0.1)  # slow spectral decay
        modes = solve_fredholm(kernel, tau=1.0, grid_size=150)
        full = reconstruct_covariance(modes)
        truncated = reconstruct_covariance(modes[:3])
        assert np.max(np.abs(full - truncated)) > 1e-2

    def test_empty_selection_rejected(self):
        with pytest.raises(ValueError):
            reconstruct_covariance([])


class TestTransitionRates:
    def test_static_system_rate_closed_form(self):
        """With h0 = 0 every gap vanishes: rate = sum|v_jk|^2 (int sqrt(l) g)^2 / tau.

        For v = sigma_z that coefficient is 2, independent of the h0
        eigenbasis because the Frobenius norm is basis-invariant.
        """
        kernel = OrnsteinUhlenbeckKernel(1.0, 10.0)
        modes = solve_fredholm(kernel, tau=1.0, grid_size=200, n_modes=4)
        h0 = np.zeros((2, 2), dtype=complex)
        for mode in modes:
            integral = np.sum(mode.grid.weights *
                              np.sqrt(mode.eigenvalue) * mode.values)
            expected = 2.0 * integral**2 / 1.0
            assert transition_rate(mode, h0, SIGMA_Z, 1.0) == pytest.approx(
                expected, abs=1e-12)

    def test_null_mode_rate_is_negligible(self):
        """sqrt(lambda) ~ 1e-8 for a numerically-null mode, so its rate can
        never compete with a live mode in the selection ranking."""
        kernel = ConstantKernel(1.0)
        null_mode = solve_fredholm(kernel, tau=1.0, grid_size=60)[3]
        live_rate = transition_rate(
            solve_fredholm(kernel, tau=1.0, grid_size=60)[0],
            SIGMA_X, SIGMA_Z, 1.0)
        rate = transition_rate(null_mode, SIGMA_X, SIGMA_Z, 1.0)
        assert rate <= 1e-12 * live_rate

    def test_fast_drift_suppresses_even_modes(self):
        """A large level splitting filters modes by their spectral content.

        With h0 = 20 sx and v = sz the only matrix elements connect the two
        sx eigenstates (gap 40), so each rate is a Fourier coefficient of
        sqrt(lambda) g at frequency 40 - tiny for the smooth leading mode.
        """
        kernel = OrnsteinUhlenbeckKernel(1.0, 10.0)
        modes = solve_fredholm(kernel, tau=1.0, grid_size=300, n_modes=2)
        static = transition_rate(modes[0], np.zeros((2, 2)), SIGMA_Z, 1.0)
        driven = transition_rate(modes[0], 20 * SIGMA_X, SIGMA_Z, 1.0)
        assert driven < 1e-2 * static

    def test_rejects_bad_tau(self):
        mode = solve_fredholm(OrnsteinUhlenbeckKernel(1.0, 1.0), tau=1.0,
                              grid_size=50, n_modes=1)[0]
        with pytest.raises(ValueError):
            transition_rate(mode, SIGMA_X, SIGMA_Z, 0.0)


class TestSelection:
    def setup_method(self):
        self.kernel = OrnsteinUhlenbeckKernel(1.0, 10.0)
        self.modes = solve_fredholm(self.kernel, tau=1.0, grid_size=200,
                                    n_modes=8)
        self.rates = cumulative_rates(self.modes, np.zeros((2, 2)), SIGMA_Z,
                                      1.0)

    def test_selects_top_rates(self):
        kle = select_modes(self.modes, self.rates, 3)
        assert isinstance(kle, TruncatedKLE)
        assert kle.stochastic_dim == 3
        assert list(kle.rates) == sorted(kle.rates, reverse=True)
        assert min(kle.rates) >= max(
            r for r, record in zip(self.rates, kle.selection_report)
            if not record.selected)

    def test_report_covers_all_candidates(self):
        kle = select_modes(self.modes, self.rates, 3)
        assert len(kle.selection_report) == 8
        assert sum(record.selected for record in kle.selection_report) == 3
        assert [record.index for record in kle.selection_report] == list(
            range(1, 9))

    def test_smooth_drift_free_selection_is_by_eigenvalue(self):
        """For h0 = 0 odd modes integrate to zero, so the selected set is the
        even (symmetric) modes in descending-eigenvalue order."""
        kle = select_modes(self.modes, self.rates, 3)
        assert [m.index for m in kle.modes] == [1, 3, 5]

    def test_rejects_mismatched_rates(self):
        with pytest.raises(DimensionMismatchError):
            select_modes(self.modes, self.rates[:-1], 2)

    def test_rejects_excess_s(self):
        with pytest.raises(ValueError):
            select_modes(self.modes, self.rates, 9)

    def test_rejects_non_orthogonal_modes(self):
        mode = self.modes[0]
        with pytest.raises(NumericalConsistencyError):
            select_modes([mode, mode], [1.0, 1.0], 2)

    def test_default_candidate_count(self):
        assert default_candidate_count(1) == 12
        assert default_candidate_count(3) == 12
        assert default_candidate_count(4) == 16
        assert default_candidate_count(10) == 40


class TestSampling:
    def test_sample_covariance_matches_truncated_reconstruction(self):
        """Paths built from S modes must reproduce the truncated covariance,
        not the full kernel - that gap is exactly the truncation error."""
        kernel = OrnsteinUhlenbeckKernel(1.0, 0.1)
        modes = solve_fredholm(kernel, tau=1.0, grid_size=100, n_modes=12)
        rates = cumulative_rates(modes, np.zeros((2, 2)), SIGMA_Z, 1.0)
        kle = select_modes(modes, rates, 3)

        t_grid = modes[0].grid.nodes
        n_paths = 6000
        rng = np.random.default_rng(2024)
        paths = np.stack([sample_from_kle(kle, kernel, t_grid, rng)
                          for _ in range(n_paths)])
        sample_cov = (paths.T @ paths) / n_paths
        target = reconstruct_covariance(kle)

        # variance of a covariance estimate: (C_ii C_jj + C_ij^2) / n
        scale = kernel.variance
        stderr = np.sqrt((scale**2 + target**2) / n_paths)
        checks = [(0, 0), (50, 50), (99, 99), (0, 50), (25, 75)]
        for i, j in checks:
            assert abs(sample_cov[i, j] - target[i, j]) < 4 * stderr[i, j]
        # and it must NOT match the untruncated kernel at short lags
        exact = kernel.at_lag(np.abs(t_grid[:, None] - t_grid[None, :]))
        assert abs(target[0, 0] - exact[0, 0]) > 20 * stderr[0, 0]
