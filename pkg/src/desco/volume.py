"""Core 3D volume types and slice/patch operations.

Volumes are dense scalar grids of shape (H, W, D). Two fixed orthogonal
annotation planes are used throughout:

* plane A slices along axis 2, so a plane-A slice has shape (H, W);
* plane B slices along axis 0, so a plane-B slice has shape (W, D).

All types are immutable after construction (the wrapped arrays are marked
read-only) and all operations are pure, so instances can be shared freely
across workers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import BoundsError

__all__ = [
    "Plane",
    "Volume3D",
    "LabelVolume",
    "OrthogonalAnnotation",
    "extract_slice",
    "insert_slice",
    "crop_patch",
]


class Plane(Enum):
    """The two orthogonal annotation planes, identified by their slicing axis."""

    A = 2
    B = 0

    @property
    def axis(self) -> int:
        return self.value

    @property
    def other(self) -> "Plane":
        return Plane.B if self is Plane.A else Plane.A


def _freeze(arr: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(arr)
    if out is arr:
        out = arr.copy()
    out.setflags(write=False)
    return out


def _check_dims(shape: tuple[int, ...]) -> None:
    if len(shape) != 3 or any(s < 1 for s in shape):
        raise ValueError(f"expected a 3D grid with positive extents, got shape {shape}")


@dataclass(frozen=True)
class Volume3D:
    """Scalar intensity grid with voxel spacing metadata.

    Whole volumes entering the pipeline (loaders, generators) must be at
    least 4 voxels per side; patches produced by :func:`crop_patch` may be
    smaller.
    """

    data: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    id: str = ""

    def __post_init__(self):
        _check_dims(self.data.shape)
        if not np.all(np.isfinite(self.data)):
            raise ValueError(f"volume {self.id!r} contains non-finite values")
        if len(self.spacing) != 3 or any(s <= 0 for s in self.spacing):
            raise ValueError(f"spacing must be three positive numbers, got {self.spacing}")
        object.__setattr__(self, "data", _freeze(self.data.astype(np.float32, copy=False)))
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape


@dataclass(frozen=True)
class LabelVolume:
    """Binary foreground mask paired with a :class:`Volume3D`."""

    data: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    id: str = ""

    def __post_init__(self):
        _check_dims(self.data.shape)
        arr = np.asarray(self.data)
        if not np.issubdtype(arr.dtype, np.integer):
            raise ValueError(f"label {self.id!r} must be integer-typed, got {arr.dtype}")
        if not np.isin(arr, (0, 1)).all():
            raise ValueError(f"label {self.id!r} contains values outside {{0, 1}}")
        object.__setattr__(self, "data", _freeze(arr.astype(np.uint8, copy=False)))
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape


@dataclass(frozen=True)
class OrthogonalAnnotation:
    """Sparse ground truth: one labeled slice per orthogonal plane.

    ``label_a`` is slice ``m`` of plane A, shape (H, W); ``label_b`` is
    slice ``n`` of plane B, shape (W, D). The two slices share the line of
    voxels ``[n, :, m]`` and must agree there.
    """

    m: int
    n: int
    label_a: np.ndarray
    label_b: np.ndarray

    def __post_init__(self):
        la = np.asarray(self.label_a)
        lb = np.asarray(self.label_b)
        if la.ndim != 2 or lb.ndim != 2:
            raise ValueError("annotation slices must be 2D arrays")
        if la.shape[1] != lb.shape[0]:
            raise ValueError(
                f"slices do not share the W axis: label_a {la.shape}, label_b {lb.shape}"
            )
        for name, arr in (("label_a", la), ("label_b", lb)):
            if not np.isin(arr, (0, 1)).all():
                raise ValueError(f"{name} contains values outside {{0, 1}}")
        h, w = la.shape
        d = lb.shape[1]
        if not 0 <= self.m < d:
            raise BoundsError(f"plane A slice index {self.m} out of range [0, {d})")
        if not 0 <= self.n < h:
            raise BoundsError(f"plane B slice index {self.n} out of range [0, {h})")
        if not np.array_equal(la[self.n, :], lb[:, self.m]):
            raise ValueError(
                f"annotation slices disagree on their intersection line (m={self.m}, n={self.n})"
            )
        object.__setattr__(self, "label_a", _freeze(la.astype(np.uint8, copy=False)))
        object.__setattr__(self, "label_b", _freeze(lb.astype(np.uint8, copy=False)))

    @property
    def dims(self) -> tuple[int, int, int]:
        """(H, W, D) of the volume the annotation belongs to."""
        h, w = self.label_a.shape
        return h, w, self.label_b.shape[1]

    def slice_for(self, plane: Plane) -> np.ndarray:
        return self.label_a if plane is Plane.A else self.label_b

    def index_for(self, plane: Plane) -> int:
        return self.m if plane is Plane.A else self.n


def _data_of(v) -> np.ndarray:
    return v.data if hasattr(v, "data") else np.asarray(v)


def extract_slice(v, plane: Plane, index: int) -> np.ndarray:
    """Return a copy of the orthogonal slice ``index`` of ``v`` in ``plane``."""
    data = _data_of(v)
    extent = data.shape[plane.axis]
    if not 0 <= index < extent:
        raise BoundsError(
            f"slice index {index} out of range for plane {plane.name} (extent {extent})"
        )
    return np.take(data, index, axis=plane.axis).copy()


def insert_slice(volume_data: np.ndarray, plane: Plane, index: int, slice2d: np.ndarray) -> np.ndarray:
    """Return a copy of ``volume_data`` with ``slice2d`` written at ``index``."""
    extent = volume_data.shape[plane.axis]
    if not 0 <= index < extent:
        raise BoundsError(
            f"slice index {index} out of range for plane {plane.name} (extent {extent})"
        )
    out = np.array(volume_data, copy=True)
    if plane is Plane.A:
        out[:, :, index] = slice2d
    else:
        out[index, :, :] = slice2d
    return out


def crop_patch(v, origin: tuple[int, int, int], size: tuple[int, int, int]):
    """Crop an axis-aligned patch; no implicit padding.

    Returns the same type as ``v`` (Volume3D or LabelVolume), sharing its
    spacing and id.
    """
    data = _data_of(v)
    for ax in range(3):
        if origin[ax] < 0 or size[ax] < 1 or origin[ax] + size[ax] > data.shape[ax]:
            raise BoundsError(
                f"crop origin={tuple(origin)} size={tuple(size)} exceeds "
                f"volume shape {data.shape} on axis {ax}"
            )
    sl = tuple(slice(origin[ax], origin[ax] + size[ax]) for ax in range(3))
    patch = data[sl].copy()
    if isinstance(v, LabelVolume):
        return LabelVolume(patch, v.spacing, v.id)
    if isinstance(v, Volume3D):
        return Volume3D(patch, v.spacing, v.id)
    return patch
