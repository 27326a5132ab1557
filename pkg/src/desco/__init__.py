"""Barely-supervised 3D segmentation from two orthogonal labeled slices.

The pipeline: annotate one slice in each of two orthogonal planes per
labeled volume, propagate those slices into dense pseudo labels with
slice-to-slice registration, then co-train two segmentation networks under
a dense-to-sparse credibility schedule with uncertainty-masked
cross-supervision on unlabeled volumes.
"""

__version__ = "0.1.0"

from .volume import LabelVolume, OrthogonalAnnotation, Plane, Volume3D  # noqa: F401
