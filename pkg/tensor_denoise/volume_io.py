"""
On-disk formats: the TVOL volume container and 8-bit PGM slice images.

TVOL layout (little-endian): magic "TVOL", u32 version, three u32 dims,
f64 sample interval, then n1*n2*n3 f32 samples with the first axis fastest.
"""
import os
import tempfile
from pathlib import Path
from typing import List, Sequence, Tuple, Union

import numpy as np
from scipy.stats import median_abs_deviation

from tensor_denoise.exceptions import DataValidationError, VolumeFormatError
from tensor_denoise.logger import get_logger
from tensor_denoise.patches import AXIS_LABELS, Volume

logger = get_logger(__name__)

PathLike = Union[str, Path]

MAGIC = b"TVOL"
FORMAT_VERSION = 1
HEADER_DTYPE = np.dtype([
    ("magic", "S4"),
    ("version", "<u4"),
    ("dims", "<u4", (3,)),
    ("sample_interval", "<f8"),
])
PAYLOAD_DTYPE = np.dtype("<f4")
CLIP_STDS = 3.0


def _atomic_write(path: PathLike, payload: bytes) -> None:
    """Write through a temporary file in the target directory, then rename"""
    target = Path(path)
    fd, tmp = tempfile.mkstemp(dir=target.parent, prefix=f".{target.name}.")
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(payload)
        os.replace(tmp, target)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def encode_array(data: np.ndarray, sample_interval: float) -> bytes:
    """
    Serialize a third-order array as a TVOL container.

    Raises:
        DataValidationError: If the samples are not finite in float32
    """
    arr = np.asarray(data)
    if arr.ndim != 3:
        raise DataValidationError(f"TVOL holds third-order arrays, got {arr.ndim} dimensions")
    with np.errstate(over="ignore"):
        samples = arr.astype(PAYLOAD_DTYPE)
    if not np.all(np.isfinite(samples)):
        raise DataValidationError(
            "samples are not finite in single precision",
            error_code="NON_FINITE_PAYLOAD",
        )
    header = np.zeros((), dtype=HEADER_DTYPE)
    header["magic"] = MAGIC
    header["version"] = FORMAT_VERSION
    header["dims"] = arr.shape
    header["sample_interval"] = sample_interval
    return header.tobytes() + samples.tobytes(order="F")


def decode_array(raw: bytes, source: str = "<bytes>") -> Tuple[np.ndarray, float]:
    """
    Parse a TVOL container into (float64 array, sample interval).

    Raises:
        VolumeFormatError: If the header or payload is malformed; the source is named
    """
    if len(raw) < HEADER_DTYPE.itemsize:
        raise VolumeFormatError(
            f"{source}: truncated header",
            error_code="TRUNCATED_HEADER",
            details={"path": source, "size": len(raw)},
        )
    header = np.frombuffer(raw, dtype=HEADER_DTYPE, count=1)[0]
    if bytes(header["magic"]) != MAGIC:
        raise VolumeFormatError(
            f"{source}: bad magic bytes {bytes(header['magic'])!r}",
            error_code="BAD_MAGIC",
            details={"path": source},
        )
    if int(header["version"]) != FORMAT_VERSION:
        raise VolumeFormatError(
            f"{source}: unsupported format version {int(header['version'])}",
            error_code="BAD_VERSION",
            details={"path": source, "version": int(header["version"])},
        )
    dims = tuple(int(d) for d in header["dims"])
    if any(d < 1 for d in dims):
        raise VolumeFormatError(f"{source}: dims must be positive, got {dims}", error_code="BAD_DIMS")
    expected = HEADER_DTYPE.itemsize + int(np.prod(dims)) * PAYLOAD_DTYPE.itemsize
    if len(raw) != expected:
        raise VolumeFormatError(
            f"{source}: payload length does not match dims {dims}",
            error_code="PAYLOAD_LENGTH",
            details={"path": source, "expected": expected, "actual": len(raw)},
        )
    samples = np.frombuffer(raw, dtype=PAYLOAD_DTYPE, offset=HEADER_DTYPE.itemsize)
    if not np.all(np.isfinite(samples)):
        raise VolumeFormatError(f"{source}: payload has non-finite samples", error_code="NON_FINITE_PAYLOAD")
    data = samples.reshape(dims, order="F").astype(np.float64)
    return data, float(header["sample_interval"])


def write_volume(path: PathLike, volume: Volume) -> None:
    _atomic_write(path, encode_array(volume.data, volume.sample_interval))
    logger.debug(f"Wrote volume {volume.dims} to {path}")


def write_volumes(targets: Sequence[Tuple[PathLike, Volume]]) -> None:
    """
    Write several volumes as one unit: all are encoded before any file is
    touched, and files already written are removed if a later write fails.
    """
    payloads = [(Path(path), encode_array(v.data, v.sample_interval)) for path, v in targets]
    written: List[Path] = []
    try:
        for path, payload in payloads:
            _atomic_write(path, payload)
            written.append(path)
    except BaseException:
        for path in written:
            path.unlink(missing_ok=True)
        raise
    logger.debug(f"Wrote {len(written)} volumes")


def write_array(path: PathLike, data: np.ndarray, sample_interval: float = 1.0) -> None:
    """Store any third-order array (e.g. a dictionary, m x r x k) in the same container"""
    _atomic_write(path, encode_array(data, sample_interval))


def read_array(path: PathLike) -> Tuple[np.ndarray, float]:
    return decode_array(Path(path).read_bytes(), source=str(path))


def read_volume(path: PathLike) -> Volume:
    """
    Raises:
        VolumeFormatError: If the file is not a valid TVOL container
        OSError: If the file cannot be read
    """
    data, sample_interval = read_array(path)
    return Volume(data, sample_interval=sample_interval)


def extract_slice(volume: Volume, axis: str, index: int) -> np.ndarray:
    """
    2D section at a fixed index along the named axis (time, inline or crossline).

    Raises:
        DataValidationError: If the axis is unknown or the index is out of range
    """
    if axis not in AXIS_LABELS:
        raise DataValidationError(
            f"unknown axis {axis!r}; expected one of {', '.join(AXIS_LABELS)}",
            error_code="BAD_AXIS",
        )
    position = AXIS_LABELS.index(axis)
    size = volume.dims[position]
    if not 0 <= index < size:
        raise DataValidationError(
            f"index {index} is out of range for {axis} (0..{size - 1})",
            error_code="SLICE_OUT_OF_RANGE",
            details={"axis": axis, "index": index, "size": size},
        )
    return np.take(volume.data, index, axis=position)


def robust_std(values: np.ndarray) -> float:
    """MAD-based standard deviation, falling back to the plain one on sparse sections"""
    spread = float(median_abs_deviation(values, axis=None, scale="normal"))
    peak = float(np.max(np.abs(values)))
    if spread <= 1e-6 * peak:
        spread = float(np.std(values))
    return spread


def to_gray(image: np.ndarray) -> np.ndarray:
    """Clip at +-3 robust standard deviations and map linearly to 0..255"""
    spread = robust_std(image)
    if spread == 0.0:
        return np.full(image.shape, 128, dtype=np.uint8)
    limit = CLIP_STDS * spread
    scaled = (np.clip(image, -limit, limit) + limit) / (2.0 * limit)
    return np.rint(scaled * 255.0).astype(np.uint8)


def write_pgm(path: PathLike, image: np.ndarray) -> None:
    """Binary (P5) 8-bit grayscale image; rows are the first slice axis"""
    gray = to_gray(np.asarray(image, dtype=np.float64))
    rows, cols = gray.shape
    header = f"P5\n{cols} {rows}\n255\n".encode("ascii")
    _atomic_write(path, header + gray.tobytes(order="C"))
    logger.debug(f"Wrote {rows}x{cols} slice image to {path}")


def write_text(path: PathLike, text: str) -> None:
    _atomic_write(path, text.encode("utf-8"))
