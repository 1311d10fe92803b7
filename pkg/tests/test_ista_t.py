import numpy as np
import pytest

from tensor_denoise import ista_t as ista_module
from tensor_denoise.exceptions import ConfigurationError, DataValidationError, DivergenceError, ShapeError
from tensor_denoise.ista_t import (
    initial_lipschitz,
    ista_t_run,
    ista_t_solve,
    lipschitz_bound,
    objective,
    smooth_gradient,
    soft_threshold,
)
from tensor_denoise.models import LipschitzStart, SolverConfig
from tensor_denoise.tensor_core import Tensor3, dft3, random_tensor, spectral_stack, tprod


def smooth_part(D, Y, X):
    return 0.5 * float(np.sum((Y.data - tprod(D, X).data) ** 2))


def sparse_tensor(shape, density, rng):
    data = rng.standard_normal(shape)
    data[rng.random(shape) >= density] = 0.0
    return Tensor3(data)


class TestSoftThreshold:
    """Test the proximal operator of the l1 norm"""

    def test_shrinks_toward_zero(self):
        a = Tensor3(np.array([[[3.0, -0.5, 1.0, -2.5]]]))
        np.testing.assert_array_equal(soft_threshold(a, 1.0).data, [[[2.0, 0.0, 0.0, -1.5]]])

    def test_zero_threshold_is_identity(self, rng):
        a = random_tensor((2, 3, 4), rng)
        np.testing.assert_array_equal(soft_threshold(a, 0.0).data, a.data)

    def test_matches_grid_search_per_entry(self, rng):
        A = Tensor3(rng.uniform(-3.0, 3.0, size=(2, 3, 2)))
        tau = 0.7
        grid = np.linspace(-4.0, 4.0, 80001)
        shrunk = soft_threshold(A, tau).data
        for index, a in np.ndenumerate(A.data):
            best = grid[np.argmin(0.5 * (grid - a) ** 2 + tau * np.abs(grid))]
            assert shrunk[index] == pytest.approx(best, abs=2e-4)

    def test_negative_threshold(self, rng):
        with pytest.raises(DataValidationError):
            soft_threshold(random_tensor((2, 2, 2), rng), -0.1)


class TestGradient:
    """Test the gradient of the smooth term"""

    def test_matches_central_differences(self, rng):
        """Test 50 random instances against directional central differences"""
        h = 1e-4
        for _ in range(50):
            m, r, n, k = rng.integers(1, 6, size=4)
            D = random_tensor((m, r, k), rng)
            Y = random_tensor((m, n, k), rng)
            X = random_tensor((r, n, k), rng)
            V = random_tensor((r, n, k), rng)
            numeric = (smooth_part(D, Y, X + h * V) - smooth_part(D, Y, X - h * V)) / (2 * h)
            analytic = float(np.vdot(smooth_gradient(D, Y, X).data, V.data))
            assert abs(numeric - analytic) <= 1e-6 * max(abs(analytic), 1.0)

    def test_shape_mismatch(self, rng):
        with pytest.raises(ShapeError):
            smooth_gradient(
                random_tensor((3, 2, 4), rng),
                random_tensor((3, 5, 4), rng),
                random_tensor((3, 5, 4), rng),
            )


class TestLipschitz:
    """Test the step-size bound"""

    def test_bounds_true_curvature(self, rng):
        D = random_tensor((6, 4, 5), rng)
        D_hat = dft3(D)
        curvature = max(np.linalg.norm(D_hat.frontal(l), 2) ** 2 for l in range(5))
        bound = lipschitz_bound(D, 2.0, 0)
        assert bound >= curvature
        assert initial_lipschitz(D, SolverConfig()) <= curvature

    def test_grows_with_backtracking_power(self, rng):
        D = random_tensor((3, 3, 3), rng)
        assert lipschitz_bound(D, 2.0, 3) == pytest.approx(8.0 * lipschitz_bound(D, 2.0, 0))

    def test_unit_impulse_atom(self):
        k = 5
        D = np.zeros((1, 1, k))
        D[0, 0, 0] = 1.0
        assert lipschitz_bound(Tensor3(D), 2.0, 0) == pytest.approx(float(k))

    def test_homogeneous_of_degree_two(self, rng):
        D = random_tensor((4, 3, 6), rng)
        assert lipschitz_bound(2.0 * D, 2.0, 0) == pytest.approx(4.0 * lipschitz_bound(D, 2.0, 0))

    def test_matches_full_spectrum_sum(self, rng):
        for k in (1, 4, 7):
            D = random_tensor((3, 5, k), rng)
            D_hat = dft3(D)
            expected = sum(
                np.linalg.norm(D_hat.frontal(l).conj().T @ D_hat.frontal(l), "fro") for l in range(k)
            )
            assert lipschitz_bound(D, 2.0, 0) == pytest.approx(expected, rel=1e-12)

    def test_zero_dictionary(self):
        with pytest.raises(DataValidationError) as exc:
            lipschitz_bound(Tensor3(np.zeros((2, 2, 2))), 2.0, 0)
        assert exc.value.error_code == "ZERO_DICTIONARY"


class TestIstaRun:
    """Test the accelerated coefficient solver"""

    def test_objective_value(self, rng):
        D = random_tensor((3, 2, 4), rng)
        X = random_tensor((2, 5, 4), rng)
        Y = random_tensor((3, 5, 4), rng)
        expected = smooth_part(D, Y, X) + 0.3 * float(np.sum(np.abs(X.data)))
        assert objective(Y, D, X, 0.3) == pytest.approx(expected)

    def test_planted_recovery(self, rng):
        """Test recovery of 5% dense coefficients from exact data"""
        m, r, n, k = 16, 32, 64, 8
        D = random_tensor((m, r, k), rng)
        D = Tensor3(D.data / np.sqrt(np.sum(D.data ** 2, axis=(0, 2)))[None, :, None])
        X_true = sparse_tensor((r, n, k), 0.05, rng)
        Y = tprod(D, X_true)
        cfg = SolverConfig(max_inner=5000, tol_obj=1e-14)

        result = ista_t_run(Y, D, cfg, Tensor3(np.zeros((r, n, k))), beta=1e-4)

        error = np.linalg.norm(result.X.data - X_true.data) / np.linalg.norm(X_true.data)
        assert error <= 1e-2
        assert all(b <= a for a, b in zip(result.best_history, result.best_history[1:]))
        assert result.objective == result.best_history[-1]

    def test_never_worse_than_warm_start(self, rng):
        D = random_tensor((4, 6, 4), rng)
        Y = random_tensor((4, 10, 4), rng)
        X0 = random_tensor((6, 10, 4), rng)
        cfg = SolverConfig(max_inner=5)
        result = ista_t_run(Y, D, cfg, X0, beta=0.5)
        assert result.objective <= objective(Y, D, X0, 0.5)

    def test_bound_start_never_backtracks(self, rng):
        D = random_tensor((4, 6, 4), rng)
        Y = random_tensor((4, 10, 4), rng)
        X0 = Tensor3(np.zeros((6, 10, 4)))
        bound = ista_t_run(
            Y, D, SolverConfig(max_inner=500, tol_obj=1e-12, lipschitz_start=LipschitzStart.BOUND), X0, beta=0.1
        )
        scaled = ista_t_run(
            Y, D, SolverConfig(max_inner=500, tol_obj=1e-12, lipschitz_start="scaled"), X0, beta=0.1
        )
        assert bound.backtracks == 0
        assert bound.lipschitz == pytest.approx(lipschitz_bound(D, 2.0, 0))
        assert abs(scaled.objective - bound.objective) <= 1e-3 * bound.objective

    def test_accepted_steps_satisfy_majorization(self, rng, mocker):
        """Test the quadratic upper bound at every accepted step of a backtracking run"""
        D = random_tensor((4, 5, 4), rng)
        Y = random_tensor((4, 7, 4), rng)
        beta = 0.3
        events = []
        real_shrink = ista_module._shrink
        real_gradient = ista_module._SpectralOperator.gradient

        def recording_shrink(a, tau):
            out = real_shrink(a, tau)
            events.append(("step", a.copy(), tau, out))
            return out

        def recording_gradient(op, residual_hat):
            grad = real_gradient(op, residual_hat)
            events.append(("gradient", grad))
            return grad

        mocker.patch.object(ista_module, "_shrink", side_effect=recording_shrink)
        mocker.patch.object(ista_module._SpectralOperator, "gradient", autospec=True, side_effect=recording_gradient)
        result = ista_t_run(Y, D, SolverConfig(max_inner=60, tol_obj=1e-14), Tensor3(np.zeros((5, 7, 4))), beta=beta)
        assert result.backtracks > 0

        blocks = []
        for event in events:
            if event[0] == "gradient":
                blocks.append([event[1], None])
            else:
                blocks[-1][1] = event
        assert len(blocks) == result.iterations
        for grad, (_, z, tau, x_new) in blocks:
            L = beta / tau
            C = z + grad / L
            step = x_new - C
            f_c = smooth_part(D, Y, Tensor3(C))
            bound = f_c + float(np.vdot(grad, step)) + 0.5 * L * float(np.sum(step ** 2))
            assert smooth_part(D, Y, Tensor3(x_new)) <= bound + 1e-9 * max(1.0, f_c)

    def test_fixed_point_is_stable(self, rng):
        D = random_tensor((6, 3, 2), rng)
        Y = random_tensor((6, 8, 2), rng)
        beta = 0.2
        L = lipschitz_bound(D, 2.0, 0)

        def prox_step(X):
            return soft_threshold(X - (1.0 / L) * smooth_gradient(D, Y, X), beta / L)

        X_star = Tensor3(np.zeros((3, 8, 2)))
        for _ in range(50000):
            X_next = prox_step(X_star)
            done = np.max(np.abs(X_next.data - X_star.data)) <= 1e-12
            X_star = X_next
            if done:
                break
        assert np.max(np.abs(prox_step(X_star).data - X_star.data)) <= 1e-10

        moved = ista_t_solve(Y, D, SolverConfig(max_inner=1), X_star, beta=beta)
        assert np.max(np.abs(moved.data - X_star.data)) <= 1e-8

    def test_spectral_residual_energy_matches_signal_domain(self, rng):
        for k in (1, 4, 5):
            D = random_tensor((3, 4, k), rng)
            X = random_tensor((4, 6, k), rng)
            Y = random_tensor((3, 6, k), rng)
            op = ista_module._SpectralOperator(D.data)
            residual_hat = op.apply(X.data) - spectral_stack(Y.data)
            assert op.half_energy(residual_hat) == pytest.approx(smooth_part(D, Y, X), rel=1e-12)
            np.testing.assert_allclose(op.gradient(residual_hat), smooth_gradient(D, Y, X).data, atol=1e-12)

    def test_large_beta_gives_zero_coefficients(self, rng):
        D = random_tensor((3, 4, 4), rng)
        Y = random_tensor((3, 5, 4), rng)
        X = ista_t_solve(Y, D, SolverConfig(), Tensor3(np.zeros((4, 5, 4))), beta=1e6)
        assert not np.any(X.data)

    def test_converges_on_tolerance(self, rng):
        D = random_tensor((4, 3, 4), rng)
        Y = random_tensor((4, 6, 4), rng)
        result = ista_t_run(Y, D, SolverConfig(max_inner=10000, tol_obj=1e-8), Tensor3(np.zeros((3, 6, 4))), beta=0.1)
        assert result.converged
        assert result.iterations < 10000

    def test_beta_from_config(self, rng):
        D = random_tensor((2, 2, 2), rng)
        Y = random_tensor((2, 3, 2), rng)
        X0 = Tensor3(np.zeros((2, 3, 2)))
        with pytest.raises(ConfigurationError):
            ista_t_run(Y, D, SolverConfig(), X0)
        result = ista_t_run(Y, D, SolverConfig(beta=0.2, max_inner=3), X0)
        assert result.iterations <= 3

    def test_non_finite_objective_diverges(self, rng):
        """Test that an overflowing objective raises instead of returning garbage"""
        D = random_tensor((2, 2, 2), rng)
        Y = Tensor3(np.full((2, 3, 2), 1e200))
        with pytest.raises(DivergenceError) as exc:
            ista_t_run(Y, D, SolverConfig(beta=1.0), Tensor3(np.zeros((2, 3, 2))))
        assert exc.value.error_code == "ISTA_DIVERGED"

    def test_records_metrics(self, rng, mocker):
        record = mocker.patch("tensor_denoise.ista_t.monitoring.record_ista")
        D = random_tensor((2, 2, 2), rng)
        Y = random_tensor((2, 3, 2), rng)
        result = ista_t_run(Y, D, SolverConfig(max_inner=4), Tensor3(np.zeros((2, 3, 2))), beta=0.1)
        record.assert_called_once_with(iterations=result.iterations, backtracks=result.backtracks)

    def test_tube_length_one_matches_matrix_fista(self, rng):
        """Test k = 1 against plain matrix FISTA run to convergence"""
        D = random_tensor((6, 8, 1), rng)
        Y = random_tensor((6, 12, 1), rng)
        A, B = D.data[:, :, 0], Y.data[:, :, 0]
        step = 1.0 / np.linalg.norm(A, 2) ** 2
        X = Z = np.zeros((8, 12))
        t = 1.0
        for _ in range(20000):
            X_next = np.sign(Z - step * A.T @ (A @ Z - B)) * np.maximum(
                np.abs(Z - step * A.T @ (A @ Z - B)) - 0.2 * step, 0.0
            )
            t_next = 0.5 * (1 + np.sqrt(1 + 4 * t * t))
            Z = X_next + (t - 1) / t_next * (X_next - X)
            X, t = X_next, t_next
        reference = 0.5 * np.sum((B - A @ X) ** 2) + 0.2 * np.sum(np.abs(X))

        result = ista_t_run(Y, D, SolverConfig(max_inner=20000, tol_obj=1e-15), Tensor3(np.zeros((8, 12, 1))), beta=0.2)
        assert result.objective == pytest.approx(reference, rel=1e-6)
