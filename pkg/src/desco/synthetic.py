"""Deterministic synthetic phantoms and orthogonal annotation synthesis.

Phantom foreground is a union of elliptic-cylinder blobs: each blob keeps
a constant elliptical cross-section over its depth range while the
cross-section center drifts slowly from slice to slice, so adjacent slices
stay similar and slice-to-slice label propagation is well posed. Every
rasterized slice is regularized with the same 3x3-cross opening the
propagation cleanup uses, which keeps single-component ground truth
invariant under that cleanup. Everything is a pure function of the spec
(including its seed), so the same spec always yields bit-identical
volumes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import NoTargetError
from .volume import LabelVolume, OrthogonalAnnotation, Plane, Volume3D, extract_slice

__all__ = [
    "PhantomSpec",
    "generate_phantom",
    "generate_translation_phantom",
    "select_annotation_slices",
    "make_orthogonal_annotation",
    "synthesize_dataset",
]

_BG_LEVEL = 0.2
_FG_LEVEL = 1.0
_EDGE_SIGMA = 0.8  # in-plane only, so plane-A slices of a drift-free blob stay identical
_REGULARIZE_STRUCT = ndimage.generate_binary_structure(2, 1)  # 3x3 cross


@dataclass(frozen=True)
class PhantomSpec:
    dims: tuple[int, int, int] = (48, 48, 48)
    n_blobs: int = 1
    drift: float = 0.5       # max per-slice center drift, voxels/slice
    noise_sigma: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if len(self.dims) != 3 or any(d < 16 for d in self.dims):
            raise ValueError(f"dims must be >= 16 per side, got {self.dims}")
        if self.n_blobs < 1:
            raise ValueError("n_blobs must be >= 1")
        if self.drift < 0 or self.noise_sigma < 0:
            raise ValueError("drift and noise_sigma must be >= 0")


def _regularize_slices(label: np.ndarray) -> np.ndarray:
    out = np.empty_like(label)
    for z in range(label.shape[2]):
        out[:, :, z] = ndimage.binary_opening(label[:, :, z], structure=_REGULARIZE_STRUCT)
    return out


def _intensity_from_label(label: np.ndarray, noise_sigma: float, rng: np.random.Generator,
                          spacing, vid: str) -> Volume3D:
    img = np.where(label > 0, _FG_LEVEL, _BG_LEVEL).astype(np.float64)
    img = ndimage.gaussian_filter(img, (_EDGE_SIGMA, _EDGE_SIGMA, 0.0))
    if noise_sigma > 0:
        img = img + rng.normal(0.0, noise_sigma, size=img.shape)
    return Volume3D(img.astype(np.float32), spacing, vid)


def generate_phantom(spec: PhantomSpec) -> tuple[Volume3D, LabelVolume]:
    """Render a drifting-blob phantom and its dense ground-truth label."""
    rng = np.random.default_rng(spec.seed)
    h, w, d = spec.dims
    x = np.arange(h, dtype=np.float64)[:, None, None]
    y = np.arange(w, dtype=np.float64)[None, :, None]
    z = np.arange(d, dtype=np.float64)[None, None, :]

    label = np.zeros(spec.dims, dtype=bool)
    for _ in range(spec.n_blobs):
        cx = rng.uniform(0.28 * h, 0.72 * h)
        cy = rng.uniform(0.28 * w, 0.72 * w)
        cz = rng.uniform(0.35 * d, 0.65 * d)
        rx = rng.uniform(0.16, 0.26) * h
        ry = rng.uniform(0.16, 0.26) * w
        rz = rng.uniform(0.18, 0.30) * d
        # sinusoidal drift of the (x, y) cross-section center along z;
        # amplitude * 2*pi/period bounds the per-slice step by spec.drift
        period = rng.uniform(1.0, 2.0) * d
        amp = spec.drift * period / (2.0 * np.pi)
        phix, phiy = rng.uniform(0, 2 * np.pi, size=2)
        dx = amp * np.sin(2 * np.pi * z / period + phix)
        dy = amp * np.sin(2 * np.pi * z / period + phiy)
        section = (((x - cx - dx) / rx) ** 2 + ((y - cy - dy) / ry) ** 2) <= 1.0
        label |= section & (np.abs(z - cz) <= rz)

    label = _regularize_slices(label.astype(np.uint8))
    vid = f"phantom-{spec.seed}"
    vol = _intensity_from_label(label, spec.noise_sigma, rng, (1.0, 1.0, 1.0), vid)
    return vol, LabelVolume(label, (1.0, 1.0, 1.0), vid)


def generate_translation_phantom(
    dims: tuple[int, int, int] = (48, 48, 48),
    shift_per_slice: tuple[float, float] = (1.0, 1.0),
    noise_sigma: float = 0.03,
    seed: int = 0,
) -> tuple[Volume3D, LabelVolume]:
    """Phantom whose plane-A cross-section is a fixed 2D shape translated by a
    known (x, y) shift per slice -- the exact-oracle case for propagation.

    The shape spans the full depth, so every slice has foreground, and with
    a zero shift all slices are identical.
    """
    if max(abs(s) for s in shift_per_slice) > 1.0:
        raise ValueError("per-slice shift must be <= 1 voxel per axis")
    rng = np.random.default_rng(seed)
    h, w, d = dims
    x = np.arange(h, dtype=np.float64)[:, None, None]
    y = np.arange(w, dtype=np.float64)[None, :, None]
    z = np.arange(d, dtype=np.float64)[None, None, :]
    z0 = (d - 1) / 2.0
    sx, sy = shift_per_slice
    cx = h / 2.0 - sx * (z - z0)
    cy = w / 2.0 - sy * (z - z0)
    # two overlapping ellipses so the cross-section is not a plain disc
    r1x, r1y = 0.22 * h, 0.16 * w
    r2x, r2y = 0.13 * h, 0.24 * w
    off = 0.08 * h
    e1 = ((x - cx) / r1x) ** 2 + ((y - cy) / r1y) ** 2 <= 1.0
    e2 = ((x - cx - off) / r2x) ** 2 + ((y - cy) / r2y) ** 2 <= 1.0
    label = _regularize_slices((e1 | e2).astype(np.uint8))
    vid = f"translation-{seed}"
    vol = _intensity_from_label(label, noise_sigma, rng, (1.0, 1.0, 1.0), vid)
    return vol, LabelVolume(label, (1.0, 1.0, 1.0), vid)


def _round_half_down(c: float) -> int:
    # deterministic tie-break: nn.5 rounds toward the lower index
    return int(np.ceil(c - 0.5))


def select_annotation_slices(label: LabelVolume) -> tuple[int, int]:
    """Pick the annotated slice per plane: the rounded foreground centroid,
    nudged to the nearest slice that still intersects the target."""
    fg = np.argwhere(label.data > 0)
    if fg.size == 0:
        raise NoTargetError("cannot select annotation slices: label has no foreground")

    def pick(axis: int) -> int:
        idx = _round_half_down(float(fg[:, axis].mean()))
        extent = label.data.shape[axis]
        idx = min(max(idx, 0), extent - 1)
        occupied = np.unique(fg[:, axis])
        if idx in occupied:
            return idx
        # ties toward the lower index
        best = occupied[np.lexsort((occupied, np.abs(occupied - idx)))][0]
        return int(best)

    m = pick(Plane.A.axis)
    n = pick(Plane.B.axis)
    return m, n


def make_orthogonal_annotation(label: LabelVolume, m: int, n: int) -> OrthogonalAnnotation:
    """Keep exactly slices m (plane A) and n (plane B); discard the rest."""
    return OrthogonalAnnotation(
        m=m,
        n=n,
        label_a=extract_slice(label, Plane.A, m),
        label_b=extract_slice(label, Plane.B, n),
    )


def synthesize_dataset(
    out_dir,
    n_volumes: int = 20,
    n_annotated: int = 3,
    n_test: int = 4,
    dims: tuple[int, int, int] = (48, 48, 48),
    n_blobs: int = 3,
    drift: float = 0.7,
    noise_sigma: float = 0.08,
    seed: int = 0,
) -> dict:
    """Write a phantom dataset in the simple format, plus manifests.

    Emits ``manifest.json`` (training: the first ``n_annotated`` entries are
    annotated with slice indices chosen by :func:`select_annotation_slices`;
    the rest carry no label path) and, when ``n_test > 0``, ``test.json``
    with dense labels for evaluation. Per-volume seeds derive from ``seed``
    so the whole directory is a pure function of the arguments.
    """
    from pathlib import Path

    from .io import ManifestEntry, save_manifest, save_volume

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if n_annotated > n_volumes:
        raise ValueError("n_annotated cannot exceed n_volumes")

    def emit(tag: str, index: int, with_label: bool, annotated: bool) -> ManifestEntry:
        spec = PhantomSpec(dims, n_blobs, drift, noise_sigma, seed=seed * 10007 + index)
        vol, lab = generate_phantom(spec)
        vpath = out / f"{tag}_{index:03d}_img.json"
        save_volume(vol, vpath)
        entry = ManifestEntry(volume_path=str(vpath), annotated=annotated)
        if with_label:
            lpath = out / f"{tag}_{index:03d}_lab.json"
            save_volume(lab, lpath)
            entry.label_path = str(lpath)
        if annotated:
            entry.m, entry.n = select_annotation_slices(lab)
        return entry

    train = [emit("train", i, with_label=i < n_annotated, annotated=i < n_annotated)
             for i in range(n_volumes)]
    save_manifest(train, out / "manifest.json")
    result = {"manifest": str(out / "manifest.json")}
    if n_test > 0:
        test = [emit("test", n_volumes + i, with_label=True, annotated=False)
                for i in range(n_test)]
        save_manifest(test, out / "test.json")
        result["test_manifest"] = str(out / "test.json")
    return result
