"""Mixing pseudo labels with sparse ground truth, and per-voxel weight maps.

A mixed label overwrites the propagated pseudo label with ground truth on
the two annotated slices. A weight map assigns credibility 1 to voxels on
either annotated slice and ``alpha**d`` elsewhere, where ``d`` is the slice
distance to the propagation source along the map's own plane.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .registration import PseudoLabelVolume
from .volume import OrthogonalAnnotation, Plane

__all__ = ["MixedLabel", "WeightMap", "label_mix", "build_weight_map", "PROV_PSEUDO", "PROV_GT"]

PROV_PSEUDO = 0
PROV_GT = 1


@dataclass(frozen=True)
class MixedLabel:
    """Dense training target; ``provenance`` marks ground-truth voxels."""

    data: np.ndarray
    provenance: np.ndarray
    plane: Plane
    source_index: int

    def __post_init__(self):
        self.data.setflags(write=False)
        self.provenance.setflags(write=False)


@dataclass(frozen=True)
class WeightMap:
    """Per-voxel credibility in [0, 1]; 1 on annotated slices, alpha^d off them."""

    data: np.ndarray
    alpha: float
    plane: Plane
    source_index: int

    def __post_init__(self):
        self.data.setflags(write=False)


def _annotated_mask(annotation: OrthogonalAnnotation, dims) -> np.ndarray:
    mask = np.zeros(dims, dtype=bool)
    mask[:, :, annotation.m] = True
    mask[annotation.n, :, :] = True
    return mask


def label_mix(pseudo: PseudoLabelVolume, annotation: OrthogonalAnnotation) -> MixedLabel:
    """Ground truth wins on the annotated slices; pseudo labels fill the rest."""
    if pseudo.data.shape != annotation.dims:
        raise ValueError(
            f"pseudo label shape {pseudo.data.shape} does not match "
            f"annotation dims {annotation.dims}"
        )
    data = pseudo.data.copy()
    data[:, :, annotation.m] = annotation.label_a
    data[annotation.n, :, :] = annotation.label_b
    provenance = np.where(_annotated_mask(annotation, data.shape), PROV_GT, PROV_PSEUDO)
    return MixedLabel(data, provenance.astype(np.uint8), pseudo.source_plane, pseudo.source_index)


def build_weight_map(
    annotation: OrthogonalAnnotation,
    plane: Plane,
    source_index: int,
    alpha: float,
    dims: tuple[int, int, int],
) -> WeightMap:
    """Credibility map for the pseudo label propagated from ``source_index``.

    The ground-truth set is the union of BOTH annotated slices (weight 1 in
    every map); distance d counts slices along this map's plane only.
    """
    if not 0 <= alpha < 1:
        raise ValueError(f"alpha must be in [0, 1), got {alpha}")
    if dims != annotation.dims:
        raise ValueError(f"dims {dims} do not match annotation dims {annotation.dims}")
    extent = dims[plane.axis]
    if not 0 <= source_index < extent:
        raise ValueError(f"source_index {source_index} out of range [0, {extent})")

    dist = np.abs(np.arange(extent, dtype=np.float64) - float(source_index))
    profile = np.power(float(alpha), dist)  # alpha**0 == 1 even at alpha == 0
    shape = [1, 1, 1]
    shape[plane.axis] = extent
    data = np.broadcast_to(profile.reshape(shape), dims).copy()
    data[_annotated_mask(annotation, dims)] = 1.0
    return WeightMap(data, float(alpha), plane, source_index)
