"""
End-to-end denoising: patch extraction, alternating coefficient and
dictionary learning, overlap-averaged reconstruction, noise injection and
SNR scoring.
"""
import math
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field
from scipy.stats import median_abs_deviation

from tensor_denoise import monitoring
from tensor_denoise.dict_dual import DualState, learn_dictionary
from tensor_denoise.exceptions import ConfigurationError, DataValidationError, ShapeError
from tensor_denoise.ista_t import ista_t_run, objective
from tensor_denoise.logger import get_logger, log_performance
from tensor_denoise.models import SolverConfig
from tensor_denoise.monitoring import PhaseTimer
from tensor_denoise.patches import PatchGrid, Volume, extract_patches, reconstruct
from tensor_denoise.tensor_core import Tensor3, tprod_arrays

logger = get_logger(__name__)

__all__ = [
    "Volume",
    "PatchGrid",
    "IterationRecord",
    "DenoiseReport",
    "denoise",
    "add_noise",
    "snr_db",
    "estimate_noise_sigma",
    "initial_dictionary",
]

# slack on the outer-loop monotonicity check, relative to the objective
MONOTONE_RTOL = 1e-9


class IterationRecord(BaseModel):
    """One pass of the alternation"""
    outer: int
    objective: float
    ista_iterations: int
    ista_backtracks: int
    lipschitz: float
    newton_iterations: int
    newton_degraded: bool
    kkt_residual: float
    reseeded_atoms: int = 0


class DenoiseReport(BaseModel):
    """Diagnostics of one denoising run"""
    beta: float
    noise_sigma: float
    atoms: int
    patches: int
    tensor_shape: Tuple[int, int, int]
    initial_objective: float
    iterations: List[IterationRecord] = Field(default_factory=list)
    converged: bool = False
    final_snr_db: Optional[float] = None
    atom_usage: List[int] = Field(default_factory=list)
    timings: Dict[str, float] = Field(default_factory=dict)
    peak_rss_bytes: int = 0

    @property
    def objective_history(self) -> List[float]:
        return [rec.objective for rec in self.iterations]

    def is_monotone(self, rtol: float = MONOTONE_RTOL) -> bool:
        values = [self.initial_objective] + self.objective_history
        slack = rtol * max(abs(self.initial_objective), 1.0)
        return all(b <= a + slack for a, b in zip(values, values[1:]))

    def to_frames(self) -> Dict[str, pd.DataFrame]:
        """Report tables: per-iteration, per-atom usage and phase timings"""
        iterations = pd.DataFrame([rec.model_dump() for rec in self.iterations])
        atoms = pd.DataFrame({"atom": range(len(self.atom_usage)), "patches_using": self.atom_usage})
        timings = pd.DataFrame(
            {"phase": list(self.timings), "seconds": list(self.timings.values())}
        )
        return {"iterations": iterations, "atoms": atoms, "timings": timings}

    def render_text(self) -> str:
        frames = self.to_frames()
        snr = "n/a" if self.final_snr_db is None else _format_snr(self.final_snr_db)
        lines = [
            "Denoise report",
            f"tensor shape: {self.tensor_shape[0]} x {self.tensor_shape[1]} x {self.tensor_shape[2]}",
            f"atoms: {self.atoms}",
            f"beta: {self.beta:.6g} (noise sigma estimate {self.noise_sigma:.6g})",
            f"initial objective: {self.initial_objective:.10g}",
            f"converged: {self.converged}",
            f"SNR: {snr}",
            f"peak RSS: {self.peak_rss_bytes / 2 ** 20:.1f} MiB",
            "",
            "[iterations]",
            frames["iterations"].to_string(index=False) if not frames["iterations"].empty else "(none)",
            "",
            "[atom usage]",
            frames["atoms"].to_string(index=False),
            "",
            "[timings]",
            frames["timings"].to_string(index=False),
        ]
        return "\n".join(lines) + "\n"


def _format_snr(value: float) -> str:
    return "inf" if math.isinf(value) and value > 0 else f"{value:.4f} dB"


def snr_db(M: Volume, Y: Volume) -> float:
    """
    10 log10 (||M||^2 / ||M - Y||^2).

    Returns math.inf when Y equals M.

    Raises:
        ShapeError: If the volumes differ in dims
    """
    if M.dims != Y.dims:
        raise ShapeError(
            f"cannot compare volumes of dims {M.dims} and {Y.dims}",
            error_code="SNR_DIMS_MISMATCH",
        )
    error = float(np.sum((M.data - Y.data) ** 2))
    if error == 0.0:
        return math.inf
    signal = float(np.sum(M.data ** 2))
    if signal == 0.0:
        return -math.inf
    return 10.0 * math.log10(signal / error)


def add_noise(M: Volume, target_snr_db: float, seed: Optional[int]) -> Volume:
    """
    Add white Gaussian noise scaled so that snr_db(M, result) hits the target.

    The noise field is drawn first and sigma is then set from its realised
    energy, so the target is met to rounding. +inf returns M unchanged.

    Raises:
        DataValidationError: If M is identically zero
    """
    if math.isinf(target_snr_db) and target_snr_db > 0:
        return M
    signal = float(np.sum(M.data ** 2))
    if signal == 0.0:
        raise DataValidationError(
            "cannot set a noise level relative to a zero volume",
            error_code="ZERO_VOLUME",
        )
    z = np.random.default_rng(seed).standard_normal(M.dims)
    sigma = math.sqrt(signal / (float(np.sum(z ** 2)) * 10.0 ** (target_snr_db / 10.0)))
    noisy = M.with_data(M.data + sigma * z)
    logger.info(
        f"Added noise with sigma {sigma:.6g}",
        extra={"phase": "add_noise", "snr_db": snr_db(M, noisy)},
    )
    return noisy


def estimate_noise_sigma(V: Volume) -> float:
    """Robust noise level: MAD of first differences along time, over sqrt(2)"""
    if V.dims[0] < 2:
        return 0.0
    diffs = np.diff(V.data, axis=0)
    return float(median_abs_deviation(diffs, axis=None, scale="normal")) / math.sqrt(2.0)


def initial_dictionary(shape: Tuple[int, int, int], seed: int) -> Tensor3:
    """Standard normal atoms rescaled to unit lateral-slice norm"""
    D = np.random.default_rng(seed).standard_normal(shape)
    D /= np.sqrt(np.sum(D ** 2, axis=(0, 2)))[None, :, None]
    return Tensor3(D)


def _reseed_dead_atoms(
    P: Tensor3,
    D: Tensor3,
    X: Tensor3,
    beta: float,
    cfg: SolverConfig,
    current: float,
) -> Tuple[Tensor3, Tensor3, float, int]:
    """Replace atoms carrying no coefficient energy by the worst-fitted patch residuals"""
    energy = np.sum(X.data ** 2, axis=(1, 2))
    total = float(np.sum(energy))
    dead = np.flatnonzero(energy <= cfg.dead_atom_energy * max(total, np.finfo(float).tiny))
    if dead.size == 0:
        return D, X, current, 0

    residual = P.data - tprod_arrays(D.data, X.data)
    misfit = np.sum(residual ** 2, axis=(0, 2))
    order = np.argsort(misfit, kind="stable")[::-1]

    new_D = np.array(D.data)
    new_X = np.array(X.data)
    replaced = 0
    for atom, patch in zip(dead, order):
        seed_slice = residual[:, patch, :]
        norm = float(np.sqrt(np.sum(seed_slice ** 2)))
        if norm == 0.0:
            continue
        new_D[:, atom, :] = seed_slice / norm
        new_X[atom] = 0.0
        replaced += 1
    if replaced == 0:
        return D, X, current, 0

    D_next, X_next = Tensor3(new_D), Tensor3(new_X)
    value = objective(P, D_next, X_next, beta)
    if value > current + MONOTONE_RTOL * max(abs(current), 1.0):
        # zeroing residual coefficients cost more than it freed; keep the old pair
        return D, X, current, 0
    monitoring.record_reseed(replaced)
    logger.info(f"Re-seeded {replaced} dead atoms", extra={"phase": "reseed"})
    return D_next, X_next, value, replaced


def _atom_usage(X: Tensor3) -> List[int]:
    tube_energy = np.sum(X.data ** 2, axis=2)
    return [int(c) for c in np.count_nonzero(tube_energy > 0.0, axis=1)]


@log_performance()
def denoise(
    Y: Volume,
    cfg: SolverConfig,
    G: PatchGrid,
    reference: Optional[Volume] = None,
) -> Tuple[Volume, Tensor3, DenoiseReport]:
    """
    Learn a tensor dictionary on the patches of Y and rebuild the volume.

    Args:
        Y: Noisy volume
        cfg: Solver configuration
        G: Patch grid built for Y's dims
        reference: Clean volume; when given the report carries the output SNR

    Returns:
        (denoised volume, dictionary (p1, atoms, p2*p3), report)

    Raises:
        ConfigurationError: If no outer iterations are requested
        ShapeError: If the grid does not cover Y
    """
    if cfg.max_outer < 1:
        raise ConfigurationError("no iterations requested", error_code="NO_ITERATIONS")
    if G.dims != Y.dims:
        raise ShapeError(
            f"grid built for {G.dims} applied to a volume of {Y.dims}",
            error_code="GRID_DIMS_MISMATCH",
        )
    G.check_covers()

    timings: Dict[str, float] = {}
    with PhaseTimer("extract", timings):
        P = extract_patches(Y, G)
    m, n, k = P.shape

    sigma = estimate_noise_sigma(Y)
    beta = cfg.beta if cfg.beta is not None else cfg.beta_noise_factor * sigma
    logger.info(
        f"Denoising {n} patches of {m}x{k} with {cfg.atoms} atoms, beta={beta:.6g}",
        extra={"phase": "denoise"},
    )

    D = initial_dictionary((m, cfg.atoms, k), cfg.seed)
    X = Tensor3(np.zeros((cfg.atoms, n, k)))
    dual = DualState.from_config(cfg)
    current = objective(P, D, X, beta)
    report = DenoiseReport(
        beta=beta,
        noise_sigma=sigma,
        atoms=cfg.atoms,
        patches=n,
        tensor_shape=(m, n, k),
        initial_objective=current,
    )

    for outer in range(1, cfg.max_outer + 1):
        with PhaseTimer("coefficients", timings):
            coding = ista_t_run(P, D, cfg, X, beta=beta)
        X = coding.X
        if not np.any(X.data):
            logger.warning(
                "All coefficients vanished; beta leaves nothing to learn from",
                extra={"phase": "denoise", "iteration": outer},
            )
            current = coding.objective
            report.iterations.append(
                IterationRecord(
                    outer=outer,
                    objective=current,
                    ista_iterations=coding.iterations,
                    ista_backtracks=coding.backtracks,
                    lipschitz=coding.lipschitz,
                    newton_iterations=0,
                    newton_degraded=False,
                    kkt_residual=0.0,
                )
            )
            break

        with PhaseTimer("dictionary", timings):
            D = learn_dictionary(P, X, dual)
        value = objective(P, D, X, beta)

        reseeded = 0
        if cfg.reseed_dead_atoms and outer < cfg.max_outer:
            with PhaseTimer("reseed", timings):
                D, X, value, reseeded = _reseed_dead_atoms(P, D, X, beta, cfg, value)

        report.iterations.append(
            IterationRecord(
                outer=outer,
                objective=value,
                ista_iterations=coding.iterations,
                ista_backtracks=coding.backtracks,
                lipschitz=coding.lipschitz,
                newton_iterations=dual.iterations,
                newton_degraded=dual.degraded,
                kkt_residual=dual.kkt_residual,
                reseeded_atoms=reseeded,
            )
        )
        logger.info(
            f"Outer iteration {outer} finished",
            extra={"phase": "denoise", "iteration": outer, "objective": value},
        )

        previous, current = current, value
        if reseeded == 0 and abs(previous - current) <= cfg.tol_obj * max(abs(previous), np.finfo(float).tiny):
            report.converged = True
            break

    with PhaseTimer("reconstruct", timings):
        approx = Tensor3(tprod_arrays(D.data, X.data))
        denoised = Y.with_data(reconstruct(approx, G, Y.dims).data)

    report.atom_usage = _atom_usage(X)
    report.timings = timings
    report.peak_rss_bytes = monitoring.sample_memory()
    if reference is not None:
        report.final_snr_db = snr_db(reference, denoised)
        logger.info("Denoised volume scored", extra={"phase": "denoise", "snr_db": report.final_snr_db})
    return denoised, D, report
