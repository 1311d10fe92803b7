"""
Dictionary learning: the constrained least-squares update of D for fixed
coefficients, solved through its Lagrange dual.

In the Fourier domain along the tube axis the problem separates into one
complex least-squares problem per frontal slice, coupled only by the per-atom
energy constraints  sum_l ||D_hat_l(:, j)||^2 <= k  (the spectral form of
||D(:, j, :)||_F^2 <= 1). For fixed multipliers lambda each slice has the
closed form  D_hat_l = (Y_hat_l X_hat_l^H)(X_hat_l X_hat_l^H + diag(lambda))^-1 ;
lambda itself maximizes the concave dual and is found by projected Newton.
"""
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple

import numpy as np
from joblib import Parallel, delayed, effective_n_jobs
from scipy.linalg import LinAlgError, cho_factor, cho_solve, eigvalsh, solve

from tensor_denoise import monitoring
from tensor_denoise.exceptions import (
    DataValidationError,
    NumericalConsistencyError,
    RankDeficiencyError,
    ShapeError,
    UnidentifiableDictionaryError,
)
from tensor_denoise.logger import get_logger, log_performance
from tensor_denoise.models import SolverConfig
from tensor_denoise.tensor_core import (
    SpectralTensor,
    Tensor3,
    idft3,
    slice_weights,
    spectral_stack,
    stacked_matmul,
)

logger = get_logger(__name__)

# relative floor on the multipliers of a rank-deficient slice system
LAMBDA_FLOOR = 1e-10
ARMIJO = 1e-4
MAX_LINE_SEARCH = 40
# the dual value is only known to a few ulps of its magnitude
VALUE_RTOL = 1e-13
CURVATURE_RTOL = 1e-8
BISECTION_STEPS = 60


@dataclass
class DualState:
    """
    Multipliers of the atom-energy constraints, carried across outer
    iterations as a warm start.
    """
    lam: np.ndarray
    newton_tol: float = 1e-9
    max_newton: int = 50
    iterations: int = 0
    degraded: bool = False
    kkt_residual: float = math.inf
    history: List[float] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.lam = np.array(self.lam, dtype=np.float64).ravel()
        if np.any(self.lam < 0) or not np.all(np.isfinite(self.lam)):
            raise DataValidationError(
                "dual variables must be finite and non-negative",
                error_code="NEGATIVE_MULTIPLIER",
            )
        if self.newton_tol <= 0 or self.max_newton < 1:
            raise DataValidationError(
                "newton_tol must be positive and max_newton at least 1",
                error_code="INVALID_DUAL_SETTINGS",
                details={"newton_tol": self.newton_tol, "max_newton": self.max_newton},
            )

    @classmethod
    def from_config(cls, cfg: SolverConfig, atoms: Optional[int] = None) -> "DualState":
        r = cfg.atoms if atoms is None else atoms
        return cls(lam=np.zeros(r), newton_tol=cfg.newton_tol, max_newton=cfg.max_newton)


@dataclass
class _DualPoint:
    lam: np.ndarray
    value: float
    grad: np.ndarray
    D: np.ndarray
    factors: list = field(default_factory=list)
    hess: Optional[np.ndarray] = None


def _rank_floors(G: np.ndarray) -> np.ndarray:
    """Per-slice multiplier floor; zero where the Gram matrix is well conditioned"""
    r = G.shape[1]
    try:
        # one batched call over the slice stack
        eig = np.linalg.eigvalsh(G)
    except LinAlgError as e:
        raise NumericalConsistencyError(
            "eigenvalues of the coefficient Gram matrices did not converge",
            error_code="GRAM_EIGEN_FAILED",
        ) from e
    top = np.maximum(eig[:, -1], 0.0)
    deficient = eig[:, 0] <= r * np.finfo(float).eps * top
    scale = np.real(np.trace(G, axis1=1, axis2=2)) / r
    return np.where(deficient, LAMBDA_FLOOR * np.where(scale > 0, scale, 1.0), 0.0)


def _map_slices(fn: Callable[[int], object], n_slices: int) -> list:
    n_jobs = effective_n_jobs(None)
    if n_jobs <= 1 or n_slices < 2:
        return [fn(l) for l in range(n_slices)]
    return Parallel(n_jobs=n_jobs, require="sharedmem")(delayed(fn)(l) for l in range(n_slices))


def _factor(M: np.ndarray, l: int, floor: float) -> Tuple[np.ndarray, bool]:
    try:
        return cho_factor(M, check_finite=False)
    except LinAlgError as e:
        hint = (
            "X_hat X_hat^H + diag(lambda) is singular; pass a positive lambda floor"
            if floor == 0.0
            else "X_hat X_hat^H + diag(lambda) is singular despite the lambda floor"
        )
        raise RankDeficiencyError(
            f"spectral slice {l}: {hint}",
            error_code="SINGULAR_SLICE_SYSTEM",
            details={"slice": l, "floor": floor},
        ) from e


class _SliceSystems:
    """
    Cached per-slice quantities A_l = Y_l X_l^H, G_l = X_l X_l^H and ||Y_l||^2
    over a stack of spectral slices, each weighted by its multiplicity.
    """

    def __init__(
        self,
        Yh: np.ndarray,
        Xh: np.ndarray,
        weights: np.ndarray,
        k: int,
        auto_floor: bool,
    ):
        XhH = np.conj(np.swapaxes(Xh, 1, 2))
        self.A = stacked_matmul(Yh, XhH)
        G = stacked_matmul(Xh, XhH)
        self.G = 0.5 * (G + np.conj(np.swapaxes(G, 1, 2)))
        self.y_energy = np.sum(np.abs(Yh) ** 2, axis=(1, 2))
        self.weights = weights
        self.k = k
        self.r = Xh.shape[1]
        self.floors = _rank_floors(self.G) if auto_floor else np.zeros(len(weights))

    @property
    def n_slices(self) -> int:
        return self.G.shape[0]

    def _solve(self, l: int, lam: np.ndarray):
        lam_eff = np.maximum(lam, self.floors[l])
        M = self.G[l] + np.diag(lam_eff)
        c = _factor(M, l, float(self.floors[l]))
        D = np.conj(cho_solve(c, np.conj(self.A[l].T), check_finite=False).T)
        fit = self.y_energy[l] - float(np.real(np.vdot(self.A[l], D)))
        return D, fit, c

    def _slice_hessian(self, D: np.ndarray, c) -> np.ndarray:
        Minv = cho_solve(c, np.eye(self.r), check_finite=False)
        P = np.conj(D.T) @ D
        return -2.0 * np.real(P.T * Minv)

    def evaluate(self, lam: np.ndarray, hessian: bool = False) -> _DualPoint:
        parts = _map_slices(lambda l: self._solve(l, lam), self.n_slices)
        D = np.stack([p[0] for p in parts])
        w = self.weights
        value = float(np.dot(w, [p[1] for p in parts])) - self.k * float(np.sum(lam))
        atom_energy = np.einsum("l,lmr->r", w, np.abs(D) ** 2)
        point = _DualPoint(
            lam=lam, value=value, grad=atom_energy - self.k, D=D, factors=[p[2] for p in parts]
        )
        if hessian:
            self.add_hessian(point)
        return point

    def add_hessian(self, point: _DualPoint) -> None:
        """Dual Hessian at an evaluated point, from its cached factorizations"""
        if point.hess is not None:
            return
        slices = _map_slices(
            lambda l: self._slice_hessian(point.D[l], point.factors[l]), self.n_slices
        )
        hess = np.einsum("l,lij->ij", self.weights, np.stack(slices))
        point.hess = 0.5 * (hess + hess.T)


def kkt_residual(lam: np.ndarray, grad: np.ndarray) -> float:
    """Largest stationarity or complementary-slackness violation"""
    stationarity = np.where(lam > 0, np.abs(grad), np.maximum(grad, 0.0))
    slackness = np.abs(lam * grad)
    return float(max(np.max(stationarity), np.max(slackness)))


def _check_concavity(H: np.ndarray) -> None:
    if H.size == 0:
        return
    try:
        eig = eigvalsh(H, check_finite=False)
    except LinAlgError as e:
        raise NumericalConsistencyError(
            "eigenvalues of the dual Hessian did not converge", error_code="NON_CONCAVE_DUAL"
        ) from e
    scale = max(float(np.max(np.abs(eig))), np.finfo(float).tiny)
    if eig[-1] > CURVATURE_RTOL * scale:
        raise NumericalConsistencyError(
            "dual Hessian has positive curvature; the dual is not concave numerically",
            error_code="NON_CONCAVE_DUAL",
            details={"max_eigenvalue": float(eig[-1]), "scale": scale},
        )


def _bisection(systems: _SliceSystems, lam: np.ndarray, tol: float, sweeps: int) -> _DualPoint:
    """Cyclic coordinate ascent; each coordinate solves grad_j = 0 by bisection"""
    lam = lam.copy()
    point = systems.evaluate(lam)
    for _ in range(sweeps):
        for j in range(systems.r):
            def grad_j(value: float) -> float:
                trial = lam.copy()
                trial[j] = value
                return float(systems.evaluate(trial).grad[j])

            if grad_j(0.0) <= 0.0:
                lam[j] = 0.0
                continue
            lo, hi = 0.0, max(lam[j], 1.0)
            while grad_j(hi) > 0.0:
                lo, hi = hi, 2.0 * hi
            for _ in range(BISECTION_STEPS):
                mid = 0.5 * (lo + hi)
                if grad_j(mid) > 0.0:
                    lo = mid
                else:
                    hi = mid
            lam[j] = hi
        point = systems.evaluate(lam)
        if kkt_residual(lam, point.grad) <= tol:
            break
    return point


def _newton(systems: _SliceSystems, state: DualState) -> _DualPoint:
    lam = state.lam if state.lam.shape == (systems.r,) else np.zeros(systems.r)
    lam = np.maximum(lam, 0.0)
    tol = state.newton_tol * max(1.0, float(systems.k))
    point = systems.evaluate(lam)
    state.degraded = False
    state.history = [point.value]
    converged = False
    it = 0

    for it in range(1, state.max_newton + 1):
        if kkt_residual(point.lam, point.grad) <= tol:
            converged = True
            it -= 1
            break

        systems.add_hessian(point)
        free = (point.lam > 0) | (point.grad > 0)
        H = point.hess[np.ix_(free, free)]
        _check_concavity(H)
        neg_h = -H
        damping = 1e-12 * max(1.0, float(np.max(np.abs(np.diag(neg_h)), initial=0.0)))
        direction = np.zeros(systems.r)
        try:
            direction[free] = solve(
                neg_h + damping * np.eye(neg_h.shape[0]),
                point.grad[free],
                assume_a="sym",
                check_finite=False,
            )
        except LinAlgError as e:
            raise NumericalConsistencyError(
                "Newton system of the dual is singular",
                error_code="SINGULAR_NEWTON_SYSTEM",
                details={"iteration": it, "free": int(np.count_nonzero(free))},
            ) from e

        alpha = 1.0
        accepted = None
        for _ in range(MAX_LINE_SEARCH):
            candidate = np.maximum(point.lam + alpha * direction, 0.0)
            trial = systems.evaluate(candidate)
            gain = ARMIJO * float(np.dot(point.grad, candidate - point.lam))
            if trial.value >= point.value + gain - VALUE_RTOL * max(1.0, abs(point.value)):
                accepted = trial
                break
            alpha *= 0.5
        if accepted is None:
            break
        point = accepted
        state.history.append(point.value)
    else:
        converged = kkt_residual(point.lam, point.grad) <= tol

    state.iterations = it
    if not converged:
        logger.warning(
            "Newton did not reach the KKT tolerance, falling back to bisection",
            extra={"phase": "dict_dual", "iteration": it, "objective": point.value},
        )
        state.degraded = True
        point = _bisection(systems, point.lam, tol, state.max_newton)

    state.lam = point.lam.copy()
    state.kkt_residual = kkt_residual(point.lam, point.grad)
    monitoring.record_newton(iterations=state.iterations, degraded=state.degraded)
    return point


def _spectral_stack_of(a: SpectralTensor) -> np.ndarray:
    return np.moveaxis(a.data, 2, 0)


def _full_systems(Y_hat: SpectralTensor, X_hat: SpectralTensor, auto_floor: bool) -> _SliceSystems:
    m, n, k = Y_hat.shape
    r, n_x, k_x = X_hat.shape
    if n != n_x or k != k_x:
        raise ShapeError(
            f"spectral inputs do not conform: Y_hat{Y_hat.shape}, X_hat{X_hat.shape}",
            error_code="DUAL_SHAPE_MISMATCH",
        )
    return _SliceSystems(
        _spectral_stack_of(Y_hat), _spectral_stack_of(X_hat), np.ones(k), k, auto_floor
    )


def _check_lambda(lam: np.ndarray, r: int) -> np.ndarray:
    lam = np.asarray(lam, dtype=np.float64).ravel()
    if lam.shape != (r,):
        raise ShapeError(f"expected {r} multipliers, got {lam.size}", error_code="DUAL_SHAPE_MISMATCH")
    if np.any(lam < 0):
        raise DataValidationError("dual variables must be non-negative", error_code="NEGATIVE_MULTIPLIER")
    return lam


def dual_objective(Y_hat: SpectralTensor, X_hat: SpectralTensor, lam: np.ndarray) -> float:
    """
    Dual function g(lambda), summed over all k spectral slices.

    Raises:
        RankDeficiencyError: If a slice system is singular; the slice is named
    """
    systems = _full_systems(Y_hat, X_hat, auto_floor=False)
    return systems.evaluate(_check_lambda(lam, systems.r)).value


def slice_update(
    Y_l: np.ndarray,
    X_l: np.ndarray,
    lam: np.ndarray,
    floor: float = 0.0,
) -> np.ndarray:
    """
    Closed-form dictionary slice (Y_l X_l^H)(X_l X_l^H + diag(lambda))^-1.

    Args:
        Y_l: Spectral data slice (m, n)
        X_l: Spectral coefficient slice (r, n)
        lam: Multipliers (r,)
        floor: Lower bound applied to the multipliers inside the system

    Returns:
        Complex matrix (m, r), obtained from a Cholesky solve

    Raises:
        RankDeficiencyError: If the system is singular
    """
    X_l = np.asarray(X_l, dtype=np.complex128)
    Y_l = np.asarray(Y_l, dtype=np.complex128)
    if Y_l.ndim != 2 or X_l.ndim != 2 or Y_l.shape[1] != X_l.shape[1]:
        raise ShapeError(
            f"slice shapes do not conform: Y{Y_l.shape}, X{X_l.shape}",
            error_code="DUAL_SHAPE_MISMATCH",
        )
    lam = _check_lambda(lam, X_l.shape[0])
    XH = np.conj(X_l.T)
    G = X_l @ XH
    M = 0.5 * (G + np.conj(G.T)) + np.diag(np.maximum(lam, floor))
    c = _factor(M, 0, floor)
    return np.conj(cho_solve(c, np.conj((Y_l @ XH).T), check_finite=False).T)


def newton_solve(Y_hat: SpectralTensor, X_hat: SpectralTensor, state: DualState) -> np.ndarray:
    """
    Maximize the dual over lambda >= 0 by projected Newton.

    The warm start is state.lam; on return state holds the solution, the
    iteration count, the final KKT residual and whether the bisection
    fallback ran.
    """
    systems = _full_systems(Y_hat, X_hat, auto_floor=True)
    return _newton(systems, state).lam.copy()


def _check_learn_shapes(Y: Tensor3, X: Tensor3) -> None:
    m, n, k = Y.shape
    if X.shape[1] != n or X.shape[2] != k:
        raise ShapeError(
            f"shapes do not conform: Y{Y.shape}, X{X.shape}",
            error_code="DUAL_SHAPE_MISMATCH",
            details={"Y": Y.shape, "X": X.shape},
        )


def _mirror(half: np.ndarray, k: int) -> np.ndarray:
    """Full spectrum from slices 0..k//2 by conjugate symmetry"""
    half = half.copy()
    half[0] = half[0].real
    if k % 2 == 0:
        half[-1] = half[-1].real
    h = half.shape[0]
    return np.concatenate([half, np.conj(half[1:k - h + 1][::-1])])


@log_performance()
def learn_dictionary(Y: Tensor3, X: Tensor3, state: DualState) -> Tensor3:
    """
    Dictionary minimizing ||Y - D * X||_F^2 subject to ||D(:, j, :)||_F^2 <= 1.

    Args:
        Y: Data tensor (m, n, k)
        X: Coefficients (r, n, k)
        state: Dual warm start; updated in place

    Returns:
        Real dictionary (m, r, k)

    Raises:
        UnidentifiableDictionaryError: If X is identically zero
        NumericalConsistencyError: If the inverse DFT is not real
    """
    _check_learn_shapes(Y, X)
    if not np.any(X.data):
        raise UnidentifiableDictionaryError(
            "coefficients are identically zero; the dictionary is unidentifiable",
            error_code="ZERO_COEFFICIENTS",
        )
    k = Y.shape[2]
    systems = _SliceSystems(
        spectral_stack(Y.data), spectral_stack(X.data), slice_weights(k), k, auto_floor=True
    )
    point = _newton(systems, state)

    full = _mirror(point.D, k)
    D = idft3(SpectralTensor(np.moveaxis(full, 0, 2))).data
    # Newton stops at the KKT tolerance; project the remaining excess
    energy = np.sum(D ** 2, axis=(0, 2))
    over = energy > 1.0
    if np.any(over):
        D = D.copy()
        D[:, over, :] /= np.sqrt(energy[over])[None, :, None]

    logger.debug(
        "dictionary update finished",
        extra={
            "phase": "dict_dual",
            "iteration": state.iterations,
            "objective": point.value / k,
        },
    )
    return Tensor3(D)
