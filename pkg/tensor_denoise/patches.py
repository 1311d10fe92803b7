"""
Volumes and the patch grid that turns a volume into a third-order tensor.

Tensorization: mode 1 is the time axis inside a patch, mode 2 the patch index
and mode 3 (the circular-convolution axis) the flattened spatial footprint,
tube index t = i2 + p2 * i3. Patches are enumerated with the first anchor
axis fastest.
"""
from dataclasses import dataclass
from typing import Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from tensor_denoise.exceptions import DataValidationError, ShapeError
from tensor_denoise.logger import get_logger
from tensor_denoise.models import GridSettings
from tensor_denoise.tensor_core import Tensor3

logger = get_logger(__name__)

Dims = Tuple[int, int, int]
AXIS_LABELS = ("time", "inline", "crossline")


@dataclass(frozen=True, eq=False)
class Volume:
    """Real 3D volume indexed (time, inline, crossline)."""

    data: np.ndarray
    sample_interval: float = 1.0
    axis_labels: Tuple[str, str, str] = AXIS_LABELS

    def __post_init__(self) -> None:
        arr = np.array(self.data, dtype=np.float64)
        if arr.ndim != 3 or any(d < 1 for d in arr.shape):
            raise ShapeError(
                f"a volume needs three positive dimensions, got {arr.shape}",
                error_code="VOLUME_SHAPE",
                details={"shape": arr.shape},
            )
        if not np.all(np.isfinite(arr)):
            raise DataValidationError("volume contains non-finite samples", error_code="NON_FINITE_VOLUME")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def dims(self) -> Dims:
        return self.data.shape  # type: ignore[return-value]

    def with_data(self, data: np.ndarray) -> "Volume":
        """Same metadata, new samples"""
        return Volume(data, self.sample_interval, self.axis_labels)

    def __repr__(self) -> str:
        return f"Volume(dims={self.dims}, dt={self.sample_interval})"


def _axis_anchors(n: int, p: int, s: int, origin: int) -> Tuple[int, ...]:
    if p > n:
        raise ShapeError(
            f"patch length {p} exceeds volume length {n}",
            error_code="PATCH_TOO_LARGE",
            details={"patch": p, "volume": n},
        )
    anchors = set(range(origin, n - p + 1, s))
    if origin > 0:
        anchors.add(0)
    # tail patch clamped to the boundary
    anchors.add(n - p)
    return tuple(sorted(anchors))


@dataclass(frozen=True)
class PatchGrid:
    """Patch anchors for one volume geometry."""

    dims: Dims
    patch_shape: Dims
    stride: Dims
    origin: Dims
    anchors: Tuple[Tuple[int, ...], Tuple[int, ...], Tuple[int, ...]]

    @classmethod
    def build(cls, settings: GridSettings, dims: Dims) -> "PatchGrid":
        """
        Anchor positions per axis: every stride step from the origin, plus a
        head patch at 0 when the origin is offset and a tail patch clamped to
        the far boundary.

        Raises:
            ShapeError: If the patch is larger than the volume
        """
        dims = tuple(int(d) for d in dims)  # type: ignore[assignment]
        anchors = tuple(
            _axis_anchors(n, p, s, o)
            for n, p, s, o in zip(dims, settings.patch_shape, settings.stride, settings.origin)
        )
        return cls(
            dims=dims,
            patch_shape=settings.patch_shape,
            stride=settings.stride,
            origin=settings.origin,
            anchors=anchors,  # type: ignore[arg-type]
        )

    @property
    def count(self) -> int:
        return len(self.anchors[0]) * len(self.anchors[1]) * len(self.anchors[2])

    @property
    def tensor_shape(self) -> Dims:
        p1, p2, p3 = self.patch_shape
        return (p1, self.count, p2 * p3)

    def anchor(self, j: int) -> Dims:
        """Anchor of patch j (first axis fastest)"""
        a1, a2, a3 = (len(a) for a in self.anchors)
        i1, rest = j % a1, j // a1
        return (self.anchors[0][i1], self.anchors[1][rest % a2], self.anchors[2][rest // a2])

    def coverage(self) -> np.ndarray:
        """Number of patches covering each voxel"""
        counts = np.zeros(self.dims, dtype=np.int64)
        p1, p2, p3 = self.patch_shape
        for j in range(self.count):
            a1, a2, a3 = self.anchor(j)
            counts[a1:a1 + p1, a2:a2 + p2, a3:a3 + p3] += 1
        return counts

    def check_covers(self) -> None:
        """
        Raises:
            ShapeError: If some voxel is covered by no patch
        """
        uncovered = int(np.count_nonzero(self.coverage() == 0))
        if uncovered:
            raise ShapeError(
                f"patch grid leaves {uncovered} voxels uncovered",
                error_code="GRID_NOT_COVERING",
                details={"origin": self.origin, "patch_shape": self.patch_shape},
            )


def _check_grid(V: Volume, G: PatchGrid) -> None:
    if V.dims != G.dims:
        raise ShapeError(
            f"grid built for {G.dims} applied to a volume of {V.dims}",
            error_code="GRID_DIMS_MISMATCH",
        )


def extract_patches(V: Volume, G: PatchGrid) -> Tensor3:
    """
    Stack every patch as one lateral slice.

    Returns:
        Tensor3 of shape (p1, G.count, p2 * p3)
    """
    _check_grid(V, G)
    windows = sliding_window_view(V.data, G.patch_shape)
    picked = windows[np.ix_(*G.anchors)]  # (A1, A2, A3, p1, p2, p3)
    stacked = np.transpose(picked, (3, 2, 1, 0, 5, 4))
    return Tensor3(stacked.reshape(G.tensor_shape))


def reconstruct(patches: Tensor3, G: PatchGrid, dims: Dims) -> Volume:
    """
    Average overlapping patch copies back into a volume.

    Each voxel is the arithmetic mean of its copies, accumulated as a running
    mean so identical copies reproduce the value exactly.

    Raises:
        ShapeError: If the patch stack or dims disagree with the grid
    """
    if tuple(dims) != G.dims or patches.shape != G.tensor_shape:
        raise ShapeError(
            f"patch stack {patches.shape} and dims {tuple(dims)} do not match the grid",
            error_code="GRID_DIMS_MISMATCH",
            details={"expected_stack": G.tensor_shape, "expected_dims": G.dims},
        )
    p1, p2, p3 = G.patch_shape
    mean = np.zeros(G.dims)
    counts = np.zeros(G.dims)
    blocks = patches.data.reshape(p1, G.count, p3, p2)
    for j in range(G.count):
        a1, a2, a3 = G.anchor(j)
        region = (slice(a1, a1 + p1), slice(a2, a2 + p2), slice(a3, a3 + p3))
        counts[region] += 1.0
        block = np.transpose(blocks[:, j], (0, 2, 1))
        mean[region] += (block - mean[region]) / counts[region]
    if np.any(counts == 0):
        raise ShapeError("patch grid does not cover the volume", error_code="GRID_NOT_COVERING")
    return Volume(mean)
