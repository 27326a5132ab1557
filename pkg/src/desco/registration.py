"""Pairwise 2D slice registration and slice-by-slice label propagation.

The builtin backend is a small two-level multiresolution demons-style
registration: at each iteration the displacement update is the intensity
difference times the fixed-image gradient, normalized by gradient magnitude
plus squared difference, then Gaussian-smoothed. The best field seen (by
mean squared error after warping, including the initial zero field) is
kept, which guarantees the warped error never exceeds the unwarped error.

Displacement convention is *pull*: a field (du, dv) resamples the moving
image at ``moving[i + du[i, j], j + dv[i, j]]``. A pure translation by
``t`` of image content therefore registers to a constant field of ``-t``.

Label propagation sweeps outward from the annotated slice in both
directions. Each step registers the previous *image* slice to the next one
and carries the previous slice's label across with nearest-neighbor
resampling, followed by morphology cleanup; the annotated source slice is
copied verbatim.
"""

from __future__ import annotations

import json
import subprocess
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage
from scipy.optimize import minimize

from .errors import RegistrationError
from .volume import OrthogonalAnnotation, Plane, Volume3D, extract_slice

__all__ = [
    "DeformationField2D",
    "RegistrationConfig",
    "PseudoLabelVolume",
    "register_slices",
    "warp_image",
    "warp_label",
    "morphology_cleanup",
    "propagate",
    "propagate_orthogonal",
]

BACKENDS = ("builtin_demons", "translation_only", "external_command")


@dataclass(frozen=True)
class DeformationField2D:
    """Dense 2D displacement (voxels), pull convention; see module docstring."""

    du: np.ndarray
    dv: np.ndarray
    field_cap: float = 10.0

    def __post_init__(self):
        if self.du.shape != self.dv.shape or self.du.ndim != 2:
            raise ValueError("du and dv must be 2D arrays of equal shape")
        if not (np.all(np.isfinite(self.du)) and np.all(np.isfinite(self.dv))):
            raise RegistrationError("deformation field contains non-finite displacements")
        cap = float(self.field_cap)
        if max(np.abs(self.du).max(initial=0.0), np.abs(self.dv).max(initial=0.0)) > cap + 1e-6:
            raise ValueError(f"displacement exceeds field_cap={cap}")
        self.du.setflags(write=False)
        self.dv.setflags(write=False)

    @property
    def shape(self) -> tuple[int, int]:
        return self.du.shape


@dataclass(frozen=True)
class RegistrationConfig:
    backend: str = "builtin_demons"
    iterations: int = 30          # per pyramid level
    smoothing_sigma: float = 1.0  # field smoothing
    pyramid_levels: int = 2
    field_cap: float = 10.0
    external_cmd: str | None = None  # template with {moving} {fixed} {out}

    def __post_init__(self):
        if self.backend not in BACKENDS:
            raise ValueError(f"unknown backend {self.backend!r}, expected one of {BACKENDS}")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.smoothing_sigma < 0:
            raise ValueError("smoothing_sigma must be >= 0")
        if self.pyramid_levels < 1:
            raise ValueError("pyramid_levels must be >= 1")
        if self.backend == "external_command" and not self.external_cmd:
            raise ValueError("external_command backend needs external_cmd")


@dataclass(frozen=True)
class PseudoLabelVolume:
    """Dense pseudo label propagated from one annotated slice."""

    data: np.ndarray
    source_plane: Plane
    source_index: int

    def __post_init__(self):
        if not np.isin(self.data, (0, 1)).all():
            raise ValueError("pseudo label contains values outside {0, 1}")
        object.__setattr__(self, "data", np.ascontiguousarray(self.data, dtype=np.uint8))
        self.data.setflags(write=False)


def _zscore(img: np.ndarray) -> np.ndarray:
    img = img.astype(np.float64)
    std = img.std()
    if std < 1e-12:
        return img - img.mean()
    return (img - img.mean()) / std


def warp_image(img: np.ndarray, field: DeformationField2D) -> np.ndarray:
    """Bilinear pull-resampling of an intensity slice; edges clamp."""
    gi, gj = np.meshgrid(
        np.arange(img.shape[0], dtype=np.float64),
        np.arange(img.shape[1], dtype=np.float64),
        indexing="ij",
    )
    coords = np.stack([gi + field.du, gj + field.dv])
    return ndimage.map_coordinates(img.astype(np.float64), coords, order=1, mode="nearest")


def warp_label(label2d: np.ndarray, field: DeformationField2D) -> np.ndarray:
    """Nearest-neighbor pull-resampling of a binary slice; outside is background."""
    if label2d.shape != field.shape:
        raise ValueError(f"label shape {label2d.shape} != field shape {field.shape}")
    gi, gj = np.meshgrid(
        np.arange(label2d.shape[0]), np.arange(label2d.shape[1]), indexing="ij"
    )
    si = np.rint(gi + field.du).astype(np.int64)
    sj = np.rint(gj + field.dv).astype(np.int64)
    inside = (si >= 0) & (si < label2d.shape[0]) & (sj >= 0) & (sj < label2d.shape[1])
    out = np.zeros_like(label2d, dtype=np.uint8)
    out[inside] = label2d[si[inside], sj[inside]]
    return out


def _mse(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.mean((a - b) ** 2))


def _downsample(img: np.ndarray) -> np.ndarray:
    return ndimage.gaussian_filter(img, 1.0)[::2, ::2]


def _upsample_field(du: np.ndarray, dv: np.ndarray, shape: tuple[int, int]):
    zoom = (shape[0] / du.shape[0], shape[1] / du.shape[1])
    du_up = ndimage.zoom(du, zoom, order=1, mode="nearest") * zoom[0]
    dv_up = ndimage.zoom(dv, zoom, order=1, mode="nearest") * zoom[1]
    return du_up, dv_up


def _demons_level(fixed, moving, du, dv, cfg: RegistrationConfig, cap: float):
    """Iterate demons updates at one resolution; returns the best field by MSE."""
    gx, gy = np.gradient(fixed)
    grad_sq = gx**2 + gy**2
    best = (du.copy(), dv.copy())
    best_err = _mse(warp_image(moving, DeformationField2D(du, dv, cap)), fixed)
    for _ in range(cfg.iterations):
        warped = warp_image(moving, DeformationField2D(du, dv, cap))
        diff = warped - fixed
        denom = grad_sq + diff**2
        with np.errstate(invalid="ignore", divide="ignore"):
            step_u = np.where(denom > 1e-9, -diff * gx / denom, 0.0)
            step_v = np.where(denom > 1e-9, -diff * gy / denom, 0.0)
        du = du + ndimage.gaussian_filter(step_u, 1.0)
        dv = dv + ndimage.gaussian_filter(step_v, 1.0)
        if cfg.smoothing_sigma > 0:
            du = ndimage.gaussian_filter(du, cfg.smoothing_sigma)
            dv = ndimage.gaussian_filter(dv, cfg.smoothing_sigma)
        np.clip(du, -cap, cap, out=du)
        np.clip(dv, -cap, cap, out=dv)
        if not (np.all(np.isfinite(du)) and np.all(np.isfinite(dv))):
            raise RegistrationError(
                f"demons update diverged to non-finite values "
                f"(level shape {fixed.shape}, iterations={cfg.iterations})"
            )
        err = _mse(warp_image(moving, DeformationField2D(du, dv, cap)), fixed)
        if err < best_err:
            best_err = err
            best = (du.copy(), dv.copy())
    return best


def _register_demons(moving, fixed, cfg: RegistrationConfig) -> DeformationField2D:
    cap = cfg.field_cap
    # coarse-to-fine pyramid; displacements rescale when moving up a level
    pyramid = [(fixed, moving)]
    for _ in range(cfg.pyramid_levels - 1):
        f, m = pyramid[-1]
        if min(f.shape) < 16:
            break
        pyramid.append((_downsample(f), _downsample(m)))
    du = np.zeros_like(pyramid[-1][0])
    dv = np.zeros_like(pyramid[-1][0])
    for f, m in reversed(pyramid):
        if du.shape != f.shape:
            du, dv = _upsample_field(du, dv, f.shape)
            np.clip(du, -cap, cap, out=du)
            np.clip(dv, -cap, cap, out=dv)
        du, dv = _demons_level(f, m, du, dv, cfg, cap)
    # never return a field worse than no deformation at all
    if _mse(warp_image(moving, DeformationField2D(du, dv, cap)), fixed) >= _mse(moving, fixed):
        du = np.zeros_like(fixed)
        dv = np.zeros_like(fixed)
    return DeformationField2D(du, dv, cap)


def _register_translation(moving, fixed, cfg: RegistrationConfig) -> DeformationField2D:
    cap = cfg.field_cap
    # integer initialization from FFT cross-correlation
    f = np.fft.rfft2(fixed)
    m = np.fft.rfft2(moving)
    corr = np.fft.irfft2(f * np.conj(m), s=fixed.shape)
    peak = np.unravel_index(np.argmax(corr), corr.shape)
    t0 = [p if p <= s // 2 else p - s for p, s in zip(peak, fixed.shape)]
    t0 = np.clip(t0, -cap, cap).astype(np.float64)

    def cost(t):
        if max(abs(t[0]), abs(t[1])) > cap:
            return 1e12
        field = DeformationField2D(
            np.full(fixed.shape, -t[0]), np.full(fixed.shape, -t[1]), cap
        )
        return _mse(warp_image(moving, field), fixed)

    res = minimize(cost, t0, method="Powell", options={"xtol": 1e-3, "ftol": 1e-9})
    t = np.clip(res.x, -cap, cap)
    if cost(t) > cost(t0):
        t = t0
    du = np.full(fixed.shape, -t[0])
    dv = np.full(fixed.shape, -t[1])
    if _mse(warp_image(moving, DeformationField2D(du, dv, cap)), fixed) >= _mse(moving, fixed):
        du = np.zeros_like(fixed)
        dv = np.zeros_like(fixed)
    return DeformationField2D(du, dv, cap)


def _register_external(moving, fixed, cfg: RegistrationConfig) -> DeformationField2D:
    from .io import load_field

    with tempfile.TemporaryDirectory(prefix="desco-reg-") as tmp:
        tmp = Path(tmp)
        for name, img in (("moving", moving), ("fixed", fixed)):
            arr = np.ascontiguousarray(img, dtype="<f4")
            (tmp / f"{name}.raw").write_bytes(arr.tobytes())
            (tmp / f"{name}.json").write_text(
                json.dumps(
                    {"shape": list(arr.shape), "dtype": "<f4", "spacing": [1.0, 1.0],
                     "id": name, "data_file": f"{name}.raw"},
                    sort_keys=True,
                )
            )
        out = tmp / "field.json"
        cmd = cfg.external_cmd.format(
            moving=tmp / "moving.json", fixed=tmp / "fixed.json", out=out
        )
        proc = subprocess.run(cmd, shell=True, capture_output=True, text=True)
        if proc.returncode != 0:
            raise RegistrationError(
                f"external registration command failed (exit {proc.returncode}): "
                f"{proc.stderr.strip()[:500]}"
            )
        if not out.exists():
            raise RegistrationError("external registration command produced no field file")
        du, dv = load_field(out)
    if du.shape != fixed.shape:
        raise RegistrationError(
            f"external field shape {du.shape} does not match slice shape {fixed.shape}"
        )
    return DeformationField2D(du.astype(np.float64), dv.astype(np.float64), cfg.field_cap)


def register_slices(
    moving: np.ndarray, fixed: np.ndarray, cfg: RegistrationConfig | None = None
) -> DeformationField2D:
    """Estimate the field that pulls ``moving`` onto ``fixed``.

    Intensities are z-score normalized per pair before matching. For the
    builtin backend the returned field never increases the mean squared
    error relative to no deformation.
    """
    cfg = cfg or RegistrationConfig()
    moving = np.asarray(moving, dtype=np.float64)
    fixed = np.asarray(fixed, dtype=np.float64)
    if moving.shape != fixed.shape:
        raise ValueError(f"slice shapes differ: {moving.shape} vs {fixed.shape}")
    if not (np.all(np.isfinite(moving)) and np.all(np.isfinite(fixed))):
        raise ValueError("slices must have finite intensities")
    mz, fz = _zscore(moving), _zscore(fixed)
    if cfg.backend == "builtin_demons":
        return _register_demons(mz, fz, cfg)
    if cfg.backend == "translation_only":
        return _register_translation(mz, fz, cfg)
    return _register_external(mz, fz, cfg)


_OPEN_STRUCT = ndimage.generate_binary_structure(2, 1)  # 3x3 cross
_CC_STRUCT = np.ones((3, 3), dtype=bool)  # 8-connectivity


def morphology_cleanup(label2d: np.ndarray) -> np.ndarray:
    """Keep the largest 8-connected component, then open with a 3x3 cross."""
    label2d = np.asarray(label2d)
    if label2d.sum() == 0:
        return np.zeros_like(label2d, dtype=np.uint8)
    comps, n = ndimage.label(label2d > 0, structure=_CC_STRUCT)
    if n > 1:
        sizes = ndimage.sum_labels(np.ones_like(comps), comps, index=np.arange(1, n + 1))
        keep = int(np.argmax(sizes)) + 1  # ties: lowest component id
        mask = comps == keep
    else:
        mask = comps > 0
    opened = ndimage.binary_opening(mask, structure=_OPEN_STRUCT)
    return opened.astype(np.uint8)


def propagate(
    volume: Volume3D,
    slice_label: np.ndarray,
    plane: Plane,
    index: int,
    cfg: RegistrationConfig | None = None,
) -> PseudoLabelVolume:
    """Spread one annotated slice through the whole volume.

    Registration is always between adjacent image slices; each new slice's
    label hops from its nearest already-labeled neighbor and is cleaned
    before the next hop. A registration failure aborts with the failing
    slice index.
    """
    cfg = cfg or RegistrationConfig()
    extent = volume.shape[plane.axis]
    src = extract_slice(volume, plane, index)  # validates the index
    if slice_label.shape != src.shape:
        raise ValueError(
            f"annotation slice shape {slice_label.shape} does not match "
            f"plane {plane.name} slice shape {src.shape}"
        )
    slices = [None] * extent
    slices[index] = np.asarray(slice_label, dtype=np.uint8).copy()
    for direction in (1, -1):
        prev_idx = index
        prev_label = slices[index]
        k = index + direction
        while 0 <= k < extent:
            img_prev = extract_slice(volume, plane, prev_idx)
            img_next = extract_slice(volume, plane, k)
            try:
                field = register_slices(img_prev, img_next, cfg)
            except RegistrationError as exc:
                raise RegistrationError(
                    f"propagation failed at slice {k} (plane {plane.name}, "
                    f"source {index}): {exc}"
                ) from exc
            nxt = morphology_cleanup(warp_label(prev_label, field))
            slices[k] = nxt
            prev_idx, prev_label = k, nxt
            k += direction
    data = np.stack(slices, axis=plane.axis)
    return PseudoLabelVolume(data, plane, index)


def propagate_orthogonal(
    volume: Volume3D,
    annotation: OrthogonalAnnotation,
    cfg: RegistrationConfig | None = None,
) -> tuple[PseudoLabelVolume, PseudoLabelVolume]:
    """Run propagation independently for each annotated plane."""
    pa = propagate(volume, annotation.label_a, Plane.A, annotation.m, cfg)
    pb = propagate(volume, annotation.label_b, Plane.B, annotation.n, cfg)
    return pa, pb
