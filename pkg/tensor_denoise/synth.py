"""
Synthetic benchmark: dipping planar reflectors convolved with a Ricker pulse.

Depth maps to samples at depth_interval meters per sample; one sample of
depth corresponds to one sample_interval of the wavelet.
"""
import math
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.signal import fftconvolve

from tensor_denoise.exceptions import DataValidationError
from tensor_denoise.logger import get_logger
from tensor_denoise.models import ReflectorSpec, SynthSettings, WaveletSpec
from tensor_denoise.patches import Volume
from tensor_denoise.pipeline import add_noise, snr_db

logger = get_logger(__name__)

__all__ = ["ReflectorSpec", "WaveletSpec", "ricker", "reflector_depths", "make_model", "benchmark_volumes"]


def ricker(w: WaveletSpec) -> np.ndarray:
    """
    (1 - 2 pi^2 f^2 t^2) exp(-pi^2 f^2 t^2) at t = -h dt .. h dt.

    Raises:
        DataValidationError: If the central frequency is at or above Nyquist
    """
    if w.central_frequency >= 0.5 / w.sample_interval:
        raise DataValidationError(
            f"{w.central_frequency} Hz is above Nyquist for dt={w.sample_interval}",
            error_code="NYQUIST_VIOLATION",
        )
    t = np.arange(-w.half_length, w.half_length + 1) * w.sample_interval
    arg = (math.pi * w.central_frequency * t) ** 2
    return (1.0 - 2.0 * arg) * np.exp(-arg)


def reflector_depths(reflector: ReflectorSpec, lateral: Tuple[int, int], depth_interval: float) -> np.ndarray:
    """Fractional sample index of the reflector on every trace, shape (n2, n3)"""
    i2 = np.arange(lateral[0])[:, None]
    i3 = np.arange(lateral[1])[None, :]
    depth = reflector.depth + reflector.dip_inline * i2 + reflector.dip_crossline * i3
    return depth / depth_interval


def make_model(
    dims: Tuple[int, int, int],
    depth_interval: float,
    reflectors: Sequence[ReflectorSpec],
    w: WaveletSpec,
) -> Volume:
    """
    Spike reflectivity convolved trace by trace with the Ricker pulse.

    Each spike is split linearly between its two neighbouring samples; the
    convolution is linear with 'same' alignment.

    Raises:
        DataValidationError: If a reflector misses the volume on every trace
    """
    n1, n2, n3 = dims
    reflectivity = np.zeros(dims)
    inline, crossline = np.meshgrid(np.arange(n2), np.arange(n3), indexing="ij")
    for reflector in reflectors:
        z = reflector_depths(reflector, (n2, n3), depth_interval)
        upper = np.floor(z).astype(np.int64)
        frac = z - upper
        placed = False
        for index, weight in ((upper, 1.0 - frac), (upper + 1, frac)):
            inside = (index >= 0) & (index < n1)
            placed = placed or bool(np.any(inside & (weight > 0)))
            np.add.at(
                reflectivity,
                (index[inside], inline[inside], crossline[inside]),
                reflector.amplitude * weight[inside],
            )
        if not placed:
            raise DataValidationError(
                f"reflector at {reflector.depth} m lies outside the volume on every trace",
                error_code="REFLECTOR_OUTSIDE",
                details={"depth": reflector.depth, "depth_range": n1 * depth_interval},
            )

    traces = fftconvolve(reflectivity, ricker(w)[:, None, None], mode="same", axes=0)
    return Volume(traces, sample_interval=w.sample_interval)


def benchmark_volumes(seed: Optional[int], settings: Optional[SynthSettings] = None) -> Tuple[Volume, Volume]:
    """Two dipping reflectors at 60 Hz with noise at the benchmark input SNR"""
    settings = settings or SynthSettings()
    clean = make_model(settings.dims, settings.depth_interval, settings.reflectors, settings.wavelet())
    noisy = add_noise(clean, settings.target_snr_db, seed)
    logger.info(
        f"Synthetic benchmark {settings.dims} generated",
        extra={"phase": "synth", "snr_db": snr_db(clean, noisy)},
    )
    return clean, noisy
