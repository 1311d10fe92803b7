"""
Third-order tensors and the t-product algebra.

A ``Tensor3`` of shape (m, n, k) holds m x n frontal slices stacked along the
tube axis. The t-product multiplies tubes by circular convolution; the DFT
along the tube axis block-diagonalises it into k independent complex matrix
products, which is the fast path used everywhere in production. Flattened
data (file I/O) is always in mode-1-fastest order.
"""
from dataclasses import dataclass
from typing import Iterable, Optional, Tuple, Union

import numpy as np
from joblib import Parallel, delayed, effective_n_jobs

from tensor_denoise.exceptions import DataValidationError, NumericalConsistencyError, ShapeError
from tensor_denoise.logger import get_logger

logger = get_logger(__name__)

IMAG_RESIDUE_TOL = 1e-9

Shape3 = Tuple[int, int, int]


def _as_array3(data: np.ndarray, dtype: type) -> np.ndarray:
    arr = np.ascontiguousarray(data, dtype=dtype)
    if arr.ndim != 3:
        raise ShapeError(
            f"expected a third-order array, got {arr.ndim} dimensions",
            details={"shape": tuple(arr.shape)},
        )
    if any(d < 1 for d in arr.shape):
        raise ShapeError("tensor dimensions must be positive", details={"shape": arr.shape})
    # read-only view; the caller's buffer keeps its own flags
    view = arr.view()
    view.setflags(write=False)
    return view


@dataclass(frozen=True, eq=False)
class Tensor3:
    """Dense real third-order tensor of shape (m, n, k)."""

    data: np.ndarray

    def __post_init__(self) -> None:
        arr = _as_array3(self.data, np.float64)
        if not np.all(np.isfinite(arr)):
            raise DataValidationError(
                "tensor contains non-finite entries",
                error_code="NON_FINITE_TENSOR",
                details={"shape": arr.shape},
            )
        object.__setattr__(self, "data", arr)

    @classmethod
    def from_flat(cls, values: Iterable[float], shape: Shape3) -> "Tensor3":
        """Build from a flat sequence in mode-1-fastest order"""
        flat = np.asarray(values, dtype=np.float64).ravel()
        if flat.size != int(np.prod(shape)):
            raise ShapeError(
                f"flat data of length {flat.size} does not match shape {shape}",
                details={"length": int(flat.size), "shape": shape},
            )
        return cls(flat.reshape(shape, order="F"))

    def to_flat(self) -> np.ndarray:
        """Entries in mode-1-fastest order"""
        return self.data.ravel(order="F")

    @property
    def shape(self) -> Shape3:
        return self.data.shape  # type: ignore[return-value]

    def __add__(self, other: "Tensor3") -> "Tensor3":
        _require_same_shape(self, other, "add")
        return Tensor3(self.data + other.data)

    def __sub__(self, other: "Tensor3") -> "Tensor3":
        _require_same_shape(self, other, "subtract")
        return Tensor3(self.data - other.data)

    def __mul__(self, scalar: float) -> "Tensor3":
        return Tensor3(self.data * float(scalar))

    __rmul__ = __mul__

    def __neg__(self) -> "Tensor3":
        return Tensor3(-self.data)

    def __repr__(self) -> str:
        return f"Tensor3(shape={self.shape})"


@dataclass(frozen=True, eq=False)
class SpectralTensor:
    """Mode-3 DFT of a tensor; frontal slice l holds the l-th DFT coefficient."""

    data: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "data", _as_array3(self.data, np.complex128))

    @property
    def shape(self) -> Shape3:
        return self.data.shape  # type: ignore[return-value]

    def frontal(self, l: int) -> np.ndarray:
        """Spectral frontal slice l as an m x n complex matrix"""
        return self.data[:, :, l]

    def is_conjugate_symmetric(self, atol: float = 1e-10) -> bool:
        k = self.shape[2]
        mirrored = np.conj(self.data[:, :, (-np.arange(k)) % k])
        scale = max(float(np.max(np.abs(self.data))), 1.0)
        return bool(np.allclose(self.data, mirrored, rtol=0.0, atol=atol * scale))

    def __repr__(self) -> str:
        return f"SpectralTensor(shape={self.shape})"


TensorLike = Union[Tensor3, np.ndarray]


def _array(a: TensorLike) -> np.ndarray:
    return a.data if isinstance(a, Tensor3) else np.asarray(a, dtype=np.float64)


def _require_same_shape(a: Tensor3, b: Tensor3, what: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(
            f"cannot {what} tensors of shapes {a.shape} and {b.shape}",
            details={"left": a.shape, "right": b.shape},
        )


def zeros(shape: Shape3) -> Tensor3:
    return Tensor3(np.zeros(shape))


def identity_tensor(n: int, k: int) -> Tensor3:
    """Identity of the t-product: first frontal slice I_n, remaining slices zero"""
    data = np.zeros((n, n, k))
    data[:, :, 0] = np.eye(n)
    return Tensor3(data)


def random_tensor(shape: Shape3, rng: Optional[np.random.Generator] = None) -> Tensor3:
    rng = rng if rng is not None else np.random.default_rng()
    return Tensor3(rng.standard_normal(shape))


# --------------------------------------------------------------------------
# Spectral stacks: half-spectrum slices arranged as (k//2 + 1, rows, cols) so
# that numpy.matmul performs the slice-wise products.
# --------------------------------------------------------------------------

def spectral_stack(a: np.ndarray) -> np.ndarray:
    """Real-input half spectrum of a (rows, cols, k) array, slice axis first"""
    return np.moveaxis(np.fft.rfft(a, axis=2), 2, 0)


def from_spectral_stack(s: np.ndarray, k: int) -> np.ndarray:
    """Inverse of ``spectral_stack``"""
    return np.ascontiguousarray(np.fft.irfft(np.moveaxis(s, 0, 2), n=k, axis=2))


def slice_weights(k: int) -> np.ndarray:
    """Multiplicity of each half-spectrum slice within the full spectrum"""
    w = np.full(k // 2 + 1, 2.0)
    w[0] = 1.0
    if k % 2 == 0:
        w[-1] = 1.0
    return w


def stacked_matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """
    Slice-wise matrix product of two spectral stacks.

    Under ``joblib.parallel_config(n_jobs>1)`` the slices are split into
    contiguous chunks and multiplied on threads; each slice is an
    independent product so the result equals the sequential one bit for bit.
    """
    n_jobs = effective_n_jobs(None)
    n_slices = a.shape[0]
    if n_jobs <= 1 or n_slices < 2:
        return np.matmul(a, b)

    bounds = np.linspace(0, n_slices, min(n_jobs, n_slices) + 1).astype(int)
    out = np.empty((n_slices, a.shape[1], b.shape[2]), dtype=np.result_type(a, b))

    def _chunk(lo: int, hi: int) -> None:
        out[lo:hi] = np.matmul(a[lo:hi], b[lo:hi])

    Parallel(n_jobs=n_jobs, require="sharedmem")(
        delayed(_chunk)(lo, hi) for lo, hi in zip(bounds[:-1], bounds[1:])
    )
    return out


def _check_tprod_shapes(a_shape: Tuple[int, ...], b_shape: Tuple[int, ...]) -> None:
    if a_shape[1] != b_shape[0] or a_shape[2] != b_shape[2]:
        raise ShapeError(
            f"t-product shape mismatch: {tuple(a_shape)} * {tuple(b_shape)}",
            error_code="TPROD_SHAPE_MISMATCH",
            details={"left": tuple(a_shape), "right": tuple(b_shape)},
        )


def tprod_arrays(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """FFT-path t-product on raw (m, r, k) and (r, n, k) arrays"""
    _check_tprod_shapes(a.shape, b.shape)
    k = a.shape[2]
    return from_spectral_stack(stacked_matmul(spectral_stack(a), spectral_stack(b)), k)


def tprod_bruteforce(a: TensorLike, b: TensorLike) -> Tensor3:
    """Direct circular-convolution t-product; O(m n r k^2), testing only"""
    A, B = _array(a), _array(b)
    _check_tprod_shapes(A.shape, B.shape)
    m, r, k = A.shape
    n = B.shape[1]
    out = np.zeros((m, n, k))
    for i in range(m):
        for j in range(n):
            for q in range(r):
                for t in range(k):
                    for s in range(k):
                        out[i, j, t] += A[i, q, s] * B[q, j, (t - s) % k]
    return Tensor3(out)


def tprod(a: Tensor3, b: Tensor3, oracle: bool = False) -> Tensor3:
    """
    t-product A * B of an m x r x k and an r x n x k tensor.

    Args:
        a: Left factor, shape (m, r, k)
        b: Right factor, shape (r, n, k)
        oracle: Use the brute-force circular-convolution path (tests only)

    Returns:
        Tensor3 of shape (m, n, k)

    Raises:
        ShapeError: If the inner dimension or tube length differ
    """
    if oracle:
        return tprod_bruteforce(a, b)
    return Tensor3(tprod_arrays(a.data, b.data))


def ttranspose_array(a: np.ndarray) -> np.ndarray:
    """Transpose every frontal slice and reverse the order of slices 2..k"""
    k = a.shape[2]
    return np.ascontiguousarray(np.transpose(a, (1, 0, 2))[:, :, (-np.arange(k)) % k])


def ttranspose(a: Tensor3) -> Tensor3:
    """Tensor transpose; slice l of its DFT is the conjugate transpose of slice l of dft3(a)"""
    return Tensor3(ttranspose_array(a.data))


def dft3(a: Tensor3) -> SpectralTensor:
    """Unnormalised forward DFT of every tube"""
    return SpectralTensor(np.fft.fft(a.data, axis=2))


def idft3(a_hat: SpectralTensor) -> Tensor3:
    """
    Inverse of ``dft3`` (carries the 1/k factor).

    Raises:
        NumericalConsistencyError: If the imaginary residue exceeds 1e-9
            relative to the real part, i.e. the input is not the spectrum of
            a real tensor
    """
    full = np.fft.ifft(a_hat.data, axis=2)
    real_norm = float(np.linalg.norm(full.real))
    imag_norm = float(np.linalg.norm(full.imag))
    if imag_norm > IMAG_RESIDUE_TOL * max(real_norm, np.finfo(float).tiny):
        raise NumericalConsistencyError(
            "inverse DFT has a significant imaginary residue",
            error_code="IMAGINARY_RESIDUE",
            details={"imag_norm": imag_norm, "real_norm": real_norm},
        )
    return Tensor3(full.real)


def fro_norm(a: Tensor3) -> float:
    return float(np.sqrt(np.sum(np.square(a.data))))


def l1_norm(a: Tensor3) -> float:
    return float(np.sum(np.abs(a.data)))


def tensor_inner(a: Tensor3, b: Tensor3) -> float:
    _require_same_shape(a, b, "take the inner product of")
    return float(np.vdot(a.data, b.data))


def lateral_slice_norms(d: Tensor3) -> np.ndarray:
    """Frobenius norm of each lateral slice D(:, j, :)"""
    return np.sqrt(np.sum(np.square(d.data), axis=(0, 2)))
