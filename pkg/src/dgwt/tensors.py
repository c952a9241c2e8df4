"""Dense float64 tensors, attention volumes, and grid index arithmetic.

Everything downstream speaks row-major float64. Attention volumes live on a
three axis grid ordered (t, h, w) with t outermost, and flatten to probability
vectors in that same order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .errors import ValidationError

GRID_AXES = ("t", "h", "w")


def as_float_array(values, name: str = "array") -> np.ndarray:
    """Coerce to a float64 ndarray, rejecting NaN and infinities."""
    arr = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite values")
    return arr


def _frozen(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, dtype=np.float64, copy=True)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class Tensor:
    """A dense tensor: a shape tuple plus flat row-major float64 data.

    Rank 0 is allowed (empty shape, one scalar element); every extent must be
    a positive integer and every value finite.
    """

    shape: tuple[int, ...]
    data: np.ndarray

    def __post_init__(self):
        shape = tuple(int(e) for e in self.shape)
        if any(e <= 0 for e in shape):
            raise ValidationError(f"non-positive extent in shape {shape}")
        data = as_float_array(self.data, "tensor data").reshape(-1)
        expected = 1
        for e in shape:
            expected *= e
        if data.size != expected:
            raise ValidationError(
                f"shape {shape} needs {expected} values, got {data.size}"
            )
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "data", _frozen(data))

    @classmethod
    def from_array(cls, array) -> "Tensor":
        arr = as_float_array(array, "tensor data")
        return cls(arr.shape, arr.reshape(-1))

    def as_array(self) -> np.ndarray:
        return self.data.reshape(self.shape)

    @property
    def rank(self) -> int:
        return len(self.shape)

    @property
    def size(self) -> int:
        return self.data.size


class TensorStats(NamedTuple):
    minimum: float
    maximum: float
    total: float
    l2norm: float


def tensor_stats(tensor: Tensor) -> TensorStats:
    """Minimum, maximum, sum and l2 norm of a tensor's values."""
    d = tensor.data
    return TensorStats(float(d.min()), float(d.max()), float(d.sum()),
                       float(np.linalg.norm(d)))


@dataclass(frozen=True)
class AttentionVolume:
    """Non-negative mass on a (t, h, w) grid."""

    mass: Tensor

    def __post_init__(self):
        if self.mass.rank != 3:
            raise ValidationError(
                f"attention volume needs a rank-3 tensor, got rank {self.mass.rank}"
            )
        if self.mass.data.min() < 0.0:
            raise ValidationError("attention mass must be non-negative")

    @classmethod
    def from_array(cls, array) -> "AttentionVolume":
        return cls(Tensor.from_array(array))

    @property
    def grid(self) -> tuple[int, int, int]:
        t, h, w = self.mass.shape
        return (t, h, w)

    def as_array(self) -> np.ndarray:
        return self.mass.as_array()


@dataclass(frozen=True)
class ProbabilityVector:
    """A finite distribution: non-negative entries summing to one within 1e-9."""

    values: np.ndarray

    def __post_init__(self):
        vals = as_float_array(self.values, "probability vector")
        if vals.ndim != 1:
            raise ValidationError("probability vector must be one dimensional")
        if vals.size == 0:
            raise ValidationError("probability vector must be non-empty")
        if vals.min() < 0.0:
            raise ValidationError("probability vector has negative entries")
        if abs(vals.sum() - 1.0) > 1e-9:
            raise ValidationError(
                f"probability vector sums to {vals.sum()!r}, not 1"
            )
        object.__setattr__(self, "values", _frozen(vals))

    def __len__(self) -> int:
        return self.values.size


def flatten_index(coord: Sequence[int], grid: Sequence[int]) -> int:
    """Row-major flat index of (t, h, w) on a grid, t outermost.

    Out-of-range coordinates raise a bounds error naming the offending axis.
    """
    if len(coord) != 3 or len(grid) != 3:
        raise ValidationError("coordinate and grid must both have three axes")
    for axis, c, e in zip(GRID_AXES, coord, grid):
        if not 0 <= int(c) < int(e):
            raise ValidationError(
                f"axis {axis}: index {int(c)} outside [0, {int(e)})"
            )
    t, h, w = (int(c) for c in coord)
    _, eh, ew = (int(e) for e in grid)
    return (t * eh + h) * ew + w


def unflatten_index(index: int, grid: Sequence[int]) -> tuple[int, int, int]:
    """Inverse of :func:`flatten_index`."""
    et, eh, ew = (int(e) for e in grid)
    n = et * eh * ew
    index = int(index)
    if not 0 <= index < n:
        raise ValidationError(f"flat index {index} outside [0, {n})")
    t, rem = divmod(index, eh * ew)
    h, w = divmod(rem, ew)
    return (t, h, w)


@dataclass(frozen=True)
class GridCoordinates:
    """Flattened 3-D coordinates of every cell of a (t, h, w) grid.

    Cell (t, h, w) maps to the point (t * s_t, h * s_h, w * s_w); rows follow
    the row-major flattening order, so ``coords[flatten_index(c, extents)]``
    is the point of cell ``c``.
    """

    extents: tuple[int, int, int]
    scales: tuple[float, float, float] = (1.0, 1.0, 1.0)
    coords: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        extents = tuple(int(e) for e in self.extents)
        scales = tuple(float(s) for s in self.scales)
        if len(extents) != 3 or any(e <= 0 for e in extents):
            raise ValidationError(f"grid extents must be three positive ints, got {extents}")
        if len(scales) != 3 or any(not np.isfinite(s) or s <= 0 for s in scales):
            raise ValidationError(f"grid scales must be three positive floats, got {scales}")
        axes = [np.arange(e, dtype=np.float64) * s for e, s in zip(extents, scales)]
        mesh = np.meshgrid(*axes, indexing="ij")
        coords = np.stack(mesh, axis=-1).reshape(-1, 3)
        object.__setattr__(self, "extents", extents)
        object.__setattr__(self, "scales", scales)
        object.__setattr__(self, "coords", _frozen(coords))

    @property
    def cell_count(self) -> int:
        return self.coords.shape[0]


def normalize_attention(volume: AttentionVolume) -> ProbabilityVector:
    """Flatten a volume row-major and normalize its mass to sum one.

    An (almost) all-zero volume, total mass below 1e-12, normalizes to the
    uniform distribution rather than erroring.
    """
    flat = volume.mass.data
    total = flat.sum()
    if total < 1e-12:
        vals = np.full(flat.size, 1.0 / flat.size)
    else:
        vals = flat / total
    return ProbabilityVector(vals)
