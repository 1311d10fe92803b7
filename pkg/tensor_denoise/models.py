"""Settings models for the solvers, the patch grid and the synthetic benchmark."""
from enum import Enum
from typing import List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

Triple = Tuple[int, int, int]


class LipschitzStart(str, Enum):
    """Where the backtracking schedule for the step size starts"""
    SCALED = "scaled"
    BOUND = "bound"


class SolverConfig(BaseModel):
    """Hyperparameters of the alternating dictionary/coefficient solver"""
    model_config = ConfigDict(frozen=True)

    beta: Optional[float] = Field(default=None, gt=0.0)
    beta_noise_factor: float = Field(default=3.0, gt=0.0)
    atoms: int = Field(default=32, ge=1, le=4096)
    max_outer: int = Field(default=10, ge=1, le=10000)
    max_inner: int = Field(default=200, ge=1, le=100000)
    eta: float = Field(default=2.0, gt=1.0, le=100.0)
    tol_obj: float = Field(default=1e-6, gt=0.0, lt=1.0)
    seed: int = Field(default=0, ge=0)
    newton_tol: float = Field(default=1e-9, gt=0.0)
    max_newton: int = Field(default=50, ge=1, le=10000)
    lipschitz_start: LipschitzStart = LipschitzStart.SCALED
    dead_atom_energy: float = Field(default=1e-8, ge=0.0)
    reseed_dead_atoms: bool = True

    @field_validator("lipschitz_start", mode="before")
    @classmethod
    def parse_lipschitz_start(cls, v):
        if isinstance(v, str):
            return LipschitzStart(v.lower())
        return v


class GridSettings(BaseModel):
    """Patch geometry; the grid itself is built against a concrete volume"""
    model_config = ConfigDict(frozen=True)

    patch_shape: Triple = (16, 8, 8)
    stride: Triple = (8, 4, 4)
    origin: Triple = (0, 0, 0)

    @field_validator("patch_shape", "stride")
    @classmethod
    def positive_entries(cls, v: Triple) -> Triple:
        if any(x < 1 for x in v):
            raise ValueError("entries must be positive")
        return v

    @field_validator("origin")
    @classmethod
    def nonnegative_entries(cls, v: Triple) -> Triple:
        if any(x < 0 for x in v):
            raise ValueError("entries must be non-negative")
        return v

    @model_validator(mode="after")
    def stride_within_patch(self) -> "GridSettings":
        if any(s > p for s, p in zip(self.stride, self.patch_shape)):
            raise ValueError("stride must not exceed patch_shape (voxels would be skipped)")
        return self


class WaveletSpec(BaseModel):
    """Ricker source pulse sampled on a symmetric support"""
    model_config = ConfigDict(frozen=True)

    central_frequency: float = Field(default=60.0, gt=0.0)
    sample_interval: float = Field(default=0.001, gt=0.0)
    half_length: int = Field(default=80, ge=1)

    @model_validator(mode="after")
    def nyquist(self) -> "WaveletSpec":
        if self.central_frequency >= 0.5 / self.sample_interval:
            raise ValueError("central_frequency violates the Nyquist limit")
        return self


class ReflectorSpec(BaseModel):
    """Planar reflector: depth at trace (0, 0) plus dips in meters per trace"""
    model_config = ConfigDict(frozen=True)

    depth: float
    dip_inline: float = 0.0
    dip_crossline: float = 0.0
    amplitude: float = 1.0


class SynthSettings(BaseModel):
    """Geometry of the synthetic benchmark"""
    model_config = ConfigDict(frozen=True)

    dims: Triple = (1200, 32, 32)
    depth_interval: float = Field(default=1.0, gt=0.0)
    sample_interval: float = Field(default=0.001, gt=0.0)
    central_frequency: float = Field(default=60.0, gt=0.0)
    half_length: int = Field(default=80, ge=1)
    reflectors: List[ReflectorSpec] = Field(
        default_factory=lambda: [
            ReflectorSpec(depth=300.0, dip_inline=2.0, dip_crossline=1.0, amplitude=1.0),
            ReflectorSpec(depth=900.0, dip_inline=-1.5, dip_crossline=2.5, amplitude=0.8),
        ]
    )
    target_snr_db: float = 0.14

    @field_validator("dims")
    @classmethod
    def positive_dims(cls, v: Triple) -> Triple:
        if any(x < 1 for x in v):
            raise ValueError("dims must be positive")
        return v

    @model_validator(mode="after")
    def nyquist(self) -> "SynthSettings":
        self.wavelet()
        return self

    def wavelet(self) -> WaveletSpec:
        return WaveletSpec(
            central_frequency=self.central_frequency,
            sample_interval=self.sample_interval,
            half_length=self.half_length,
        )
