"""
Coefficient learning: iterative shrinkage-thresholding in the t-product
algebra with FISTA momentum.

Solves  min_X  1/2 ||Y - D * X||_F^2 + beta ||X||_1  for a fixed dictionary D.
The smooth part is handled in the Fourier domain, where D * X is a stack of
independent slice products; the proximal step is an elementwise soft
threshold in the signal domain.
"""
import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from tensor_denoise import monitoring
from tensor_denoise.exceptions import ConfigurationError, DataValidationError, DivergenceError, ShapeError
from tensor_denoise.logger import get_logger, log_performance
from tensor_denoise.models import LipschitzStart, SolverConfig
from tensor_denoise.tensor_core import (
    Tensor3,
    from_spectral_stack,
    slice_weights,
    spectral_stack,
    stacked_matmul,
    tprod_arrays,
    ttranspose_array,
)

logger = get_logger(__name__)

# relative slack on the majorization test, absorbs rounding in f
MAJORIZATION_RTOL = 1e-12


@dataclass
class IstaState:
    """Iteration state; arrays are (r, n, k)."""
    X_current: np.ndarray
    X_previous: np.ndarray
    C: np.ndarray
    t: float = 1.0
    L: float = 1.0
    p: int = 0


@dataclass
class IstaResult:
    """Outcome of a coefficient solve"""
    X: Tensor3
    objective: float
    objective_history: List[float] = field(default_factory=list)
    best_history: List[float] = field(default_factory=list)
    iterations: int = 0
    backtracks: int = 0
    lipschitz: float = 0.0
    converged: bool = False


def _check_shapes(D: Tensor3, Y: Tensor3, X: Tensor3) -> None:
    m, r, k = D.shape
    if Y.shape[0] != m or Y.shape[2] != k or X.shape != (r, Y.shape[1], k):
        raise ShapeError(
            f"shapes do not conform: D{D.shape}, Y{Y.shape}, X{X.shape}",
            error_code="SOLVER_SHAPE_MISMATCH",
            details={"D": D.shape, "Y": Y.shape, "X": X.shape},
        )


def smooth_gradient(D: Tensor3, Y: Tensor3, C: Tensor3) -> Tensor3:
    """Gradient of f(X) = 1/2 ||Y - D * X||_F^2 at C, i.e. D^T * (D * C - Y)"""
    _check_shapes(D, Y, C)
    residual = tprod_arrays(D.data, C.data) - Y.data
    return Tensor3(tprod_arrays(ttranspose_array(D.data), residual))


def lipschitz_bound(D: Tensor3, eta: float, p: int) -> float:
    """
    eta^p * sum_l ||D_l^H D_l||_F over the spectral frontal slices of D.

    The sum upper-bounds the curvature max_l ||D_l||_2^2 of the smooth term,
    so 1/L with p = 0 is always a safe step.

    Raises:
        DataValidationError: If D is identically zero
    """
    Dh = spectral_stack(D.data)
    gram = stacked_matmul(np.conj(np.swapaxes(Dh, 1, 2)), Dh)
    per_slice = np.sqrt(np.sum(np.abs(gram) ** 2, axis=(1, 2)))
    total = float(np.dot(slice_weights(D.shape[2]), per_slice))
    if total <= 0.0:
        raise DataValidationError(
            "step size is undefined for a zero dictionary",
            error_code="ZERO_DICTIONARY",
        )
    return eta ** p * total


def soft_threshold(A: Tensor3, tau: float) -> Tensor3:
    """Proximal operator of tau * ||.||_1: sign(a) * max(|a| - tau, 0)"""
    if tau < 0:
        raise DataValidationError(
            "threshold must be non-negative",
            error_code="NEGATIVE_THRESHOLD",
            details={"tau": tau},
        )
    return Tensor3(_shrink(A.data, tau))


def _shrink(a: np.ndarray, tau: float) -> np.ndarray:
    return np.sign(a) * np.maximum(np.abs(a) - tau, 0.0)


def objective(Y: Tensor3, D: Tensor3, X: Tensor3, beta: float) -> float:
    """1/2 ||Y - D * X||_F^2 + beta ||X||_1"""
    _check_shapes(D, Y, X)
    residual = Y.data - tprod_arrays(D.data, X.data)
    return 0.5 * float(np.sum(residual ** 2)) + beta * float(np.sum(np.abs(X.data)))


class _SpectralOperator:
    """
    D and its t-transpose applied on half spectra. Residuals stay in the
    spectral domain; their energy follows from Parseval with the slice
    multiplicities.
    """

    def __init__(self, D: np.ndarray):
        self.k = D.shape[2]
        self.Dh = spectral_stack(D)
        self.DhH = np.conj(np.swapaxes(self.Dh, 1, 2))
        self.weights = slice_weights(self.k) / self.k

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Half spectrum of D * X"""
        return stacked_matmul(self.Dh, spectral_stack(X))

    def gradient(self, residual_hat: np.ndarray) -> np.ndarray:
        """D^T * R in the signal domain, from the half spectrum of R"""
        return from_spectral_stack(stacked_matmul(self.DhH, residual_hat), self.k)

    def half_energy(self, residual_hat: np.ndarray) -> float:
        """1/2 ||R||_F^2 from the half spectrum of R"""
        per_slice = np.sum(residual_hat.real ** 2 + residual_hat.imag ** 2, axis=(1, 2))
        return 0.5 * float(np.dot(self.weights, per_slice))


def _resolve_beta(cfg: SolverConfig, beta: Optional[float]) -> float:
    value = beta if beta is not None else cfg.beta
    if value is None:
        raise ConfigurationError(
            "beta is unresolved; set it in the config or pass it explicitly",
            error_code="BETA_UNRESOLVED",
        )
    return float(value)


def initial_lipschitz(D: Tensor3, cfg: SolverConfig) -> float:
    """Starting point of the backtracking schedule"""
    bound = lipschitz_bound(D, cfg.eta, 0)
    if cfg.lipschitz_start == LipschitzStart.BOUND:
        return bound
    m, r, k = D.shape
    # ||G_l||_F <= sqrt(rank) ||G_l||_2, so this never exceeds the true curvature
    return bound / (k * math.sqrt(min(m, r)))


@log_performance()
def ista_t_run(
    Y: Tensor3,
    D: Tensor3,
    cfg: SolverConfig,
    X0: Tensor3,
    beta: Optional[float] = None,
) -> IstaResult:
    """
    Solve the coefficient subproblem and report the iteration history.

    Args:
        Y: Data tensor (m, n, k)
        D: Dictionary (m, r, k)
        cfg: Solver configuration (max_inner, eta, tol_obj, lipschitz_start)
        X0: Warm start (r, n, k); zero on the first outer pass
        beta: Sparsity weight; defaults to cfg.beta

    Returns:
        IstaResult holding the best iterate observed

    Raises:
        DivergenceError: If the objective becomes non-finite
    """
    _check_shapes(D, Y, X0)
    beta = _resolve_beta(cfg, beta)
    op = _SpectralOperator(D.data)
    y = Y.data
    y_hat = spectral_stack(y)
    safe_bound = lipschitz_bound(D, cfg.eta, 0)

    x0 = np.array(X0.data)
    dx_hat = op.apply(x0)
    state = IstaState(X_current=x0, X_previous=x0, C=x0, t=1.0, L=initial_lipschitz(D, cfg))
    dc_hat = dx_hat

    best_x = x0
    initial_residual = from_spectral_stack(dx_hat, op.k) - y
    best_obj = 0.5 * float(np.sum(initial_residual ** 2)) + beta * float(np.sum(np.abs(x0)))
    if not math.isfinite(best_obj):
        raise DivergenceError(
            "initial objective is not finite",
            error_code="ISTA_DIVERGED",
            details={"iteration": 0},
        )
    history = [best_obj]
    best_history = [best_obj]
    backtracks = 0
    converged = False

    for p in range(1, cfg.max_inner + 1):
        state.p = p
        residual_hat = dc_hat - y_hat
        f_c = op.half_energy(residual_hat)
        grad = op.gradient(residual_hat)

        while True:
            x_new = _shrink(state.C - grad / state.L, beta / state.L)
            dx_new_hat = op.apply(x_new)
            step = x_new - state.C
            f_new = op.half_energy(dx_new_hat - y_hat)
            majorizer = (
                f_c + float(np.vdot(grad, step)) + 0.5 * state.L * float(np.sum(step ** 2))
            )
            if f_new <= majorizer + MAJORIZATION_RTOL * max(1.0, abs(f_c)):
                break
            if state.L >= safe_bound:
                # past the global bound only rounding can violate the test
                break
            state.L *= cfg.eta
            backtracks += 1

        obj = f_new + beta * float(np.sum(np.abs(x_new)))
        if not math.isfinite(obj):
            raise DivergenceError(
                f"objective became non-finite at iteration {p}",
                error_code="ISTA_DIVERGED",
                details={"iteration": p, "lipschitz": state.L},
            )

        t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * state.t ** 2))
        weight = (state.t - 1.0) / t_next
        state.C = x_new + weight * (x_new - state.X_current)
        # D * C by linearity, saves one transform pair per iteration
        dc_hat = dx_new_hat + weight * (dx_new_hat - dx_hat)
        state.X_previous, state.X_current = state.X_current, x_new
        dx_hat = dx_new_hat
        state.t = t_next

        previous_obj = history[-1]
        history.append(obj)
        if obj < best_obj:
            best_obj, best_x = obj, x_new
        best_history.append(best_obj)

        if abs(previous_obj - obj) <= cfg.tol_obj * max(abs(previous_obj), np.finfo(float).tiny):
            converged = True
            break

    monitoring.record_ista(iterations=state.p, backtracks=backtracks)
    logger.debug(
        "coefficient solve finished",
        extra={
            "phase": "ista_t",
            "iteration": state.p,
            "objective": best_obj,
            "lipschitz": state.L,
        },
    )
    return IstaResult(
        X=Tensor3(best_x),
        objective=best_obj,
        objective_history=history,
        best_history=best_history,
        iterations=state.p,
        backtracks=backtracks,
        lipschitz=state.L,
        converged=converged,
    )


def ista_t_solve(
    Y: Tensor3,
    D: Tensor3,
    cfg: SolverConfig,
    X0: Tensor3,
    beta: Optional[float] = None,
) -> Tensor3:
    """Coefficient tensor minimising the sparse-coding objective for fixed D"""
    return ista_t_run(Y, D, cfg, X0, beta=beta).X
