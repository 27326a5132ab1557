"""File formats: simple raw+JSON volumes, NIfTI-1, deformation fields, manifests.

The *simple format* is the canonical fixture format: a little-endian raw
array file next to a JSON sidecar ``{shape, dtype, spacing, id, data_file}``.
Arrays are written in C order. ``save_volume(v, "x.json")`` produces
``x.json`` + ``x.raw``; either path loads the pair back.

NIfTI-1 support is a self-contained single-file codec (\\*.nii / \\*.nii.gz,
magic ``n+1``) covering the dtypes this package produces and the common
ones real datasets use. Spacing comes from ``pixdim``; orientation codes
are not interpreted.
"""

from __future__ import annotations

import gzip
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError
from .volume import LabelVolume, Volume3D

__all__ = [
    "save_volume",
    "load_volume",
    "load_label",
    "save_field",
    "load_field",
    "ManifestEntry",
    "load_manifest",
    "save_manifest",
]

_SIMPLE_DTYPES = {"<f4", "<f8", "|u1", "<i2", "<i4"}

# NIfTI-1 datatype code -> numpy dtype (little-endian)
_NIFTI_DTYPES = {2: "|u1", 4: "<i2", 8: "<i4", 16: "<f4", 64: "<f8", 256: "|i1", 512: "<u2"}
_NIFTI_CODES = {"|u1": 2, "<i2": 4, "<i4": 8, "<f4": 16, "<f8": 64}


def _le_str(dtype: np.dtype) -> str:
    """Canonical little-endian dtype string; 1-byte types use '|'."""
    return dtype.newbyteorder("<" if dtype.itemsize > 1 else "|").str


def _is_nifti(path: Path) -> bool:
    name = path.name.lower()
    return name.endswith(".nii") or name.endswith(".nii.gz")


def _sidecar_paths(path) -> tuple[Path, Path]:
    path = Path(path)
    if path.suffix == ".raw":
        return path.with_suffix(".json"), path
    if path.suffix == ".json":
        return path, path.with_suffix(".raw")
    raise FormatError(f"simple-format path must end in .json or .raw, got {path.name}")


def save_volume(v, path) -> None:
    """Write a Volume3D or LabelVolume; format chosen from the extension."""
    path = Path(path)
    if _is_nifti(path):
        _write_nifti(path, v.data, v.spacing)
        return
    json_path, raw_path = _sidecar_paths(path)
    data = np.ascontiguousarray(v.data)
    dtype = np.dtype(_le_str(data.dtype))
    data = data.astype(dtype, copy=False)
    meta = {
        "shape": list(data.shape),
        "dtype": dtype.str,
        "spacing": list(v.spacing),
        "id": v.id,
        "data_file": raw_path.name,
    }
    raw_path.write_bytes(data.tobytes(order="C"))
    json_path.write_text(json.dumps(meta, sort_keys=True, indent=1) + "\n")


def _read_simple(path) -> tuple[np.ndarray, tuple, str]:
    json_path, raw_path = _sidecar_paths(path)
    if not json_path.exists():
        raise FormatError(f"missing sidecar {json_path}")
    try:
        meta = json.loads(json_path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"malformed sidecar {json_path}: {exc}") from exc
    for key in ("shape", "dtype", "spacing"):
        if key not in meta:
            raise FormatError(f"sidecar {json_path} is missing field {key!r}")
    if meta["dtype"] not in _SIMPLE_DTYPES:
        raise FormatError(f"sidecar {json_path}: unsupported dtype {meta['dtype']!r}")
    data_file = json_path.parent / meta.get("data_file", raw_path.name)
    raw = data_file.read_bytes()
    shape = tuple(int(s) for s in meta["shape"])
    dtype = np.dtype(meta["dtype"])
    expected = int(np.prod(shape)) * dtype.itemsize
    if len(raw) != expected:
        raise FormatError(
            f"{data_file}: payload is {len(raw)} bytes but field 'shape'={shape} "
            f"with dtype {dtype.str} implies {expected}"
        )
    arr = np.frombuffer(raw, dtype=dtype).reshape(shape)
    return arr, tuple(float(s) for s in meta["spacing"]), str(meta.get("id", ""))


def load_volume(path) -> Volume3D:
    """Load an intensity volume (simple format or NIfTI-1)."""
    path = Path(path)
    if _is_nifti(path):
        arr, spacing = _read_nifti(path)
        vid = path.name.split(".")[0]
        return Volume3D(arr.astype(np.float32), spacing, vid)
    arr, spacing, vid = _read_simple(path)
    if not np.issubdtype(arr.dtype, np.floating):
        raise FormatError(f"{path}: field 'dtype' is {arr.dtype.str}, expected a float type")
    return Volume3D(arr.astype(np.float32), spacing, vid)


def load_label(path) -> LabelVolume:
    """Load a binary label volume (simple format or NIfTI-1)."""
    path = Path(path)
    if _is_nifti(path):
        arr, spacing = _read_nifti(path)
        return LabelVolume(np.rint(arr).astype(np.uint8), spacing, path.name.split(".")[0])
    arr, spacing, vid = _read_simple(path)
    if not np.issubdtype(arr.dtype, np.integer):
        raise FormatError(f"{path}: field 'dtype' is {arr.dtype.str}, expected an integer type")
    return LabelVolume(arr.astype(np.uint8), spacing, vid)


# -- NIfTI-1 -----------------------------------------------------------------

_HDR_SIZE = 348


def _write_nifti(path: Path, data: np.ndarray, spacing) -> None:
    dtype = np.dtype(_le_str(data.dtype))
    if dtype.str not in _NIFTI_CODES:
        raise FormatError(f"cannot write dtype {data.dtype} to NIfTI")
    data = np.ascontiguousarray(data.astype(dtype, copy=False))
    hdr = bytearray(_HDR_SIZE)
    struct.pack_into("<i", hdr, 0, _HDR_SIZE)                      # sizeof_hdr
    dims = (3, data.shape[0], data.shape[1], data.shape[2], 1, 1, 1, 1)
    struct.pack_into("<8h", hdr, 40, *dims)                        # dim
    struct.pack_into("<h", hdr, 70, _NIFTI_CODES[dtype.str])       # datatype
    struct.pack_into("<h", hdr, 72, dtype.itemsize * 8)            # bitpix
    pixdim = (1.0, spacing[0], spacing[1], spacing[2], 0.0, 0.0, 0.0, 0.0)
    struct.pack_into("<8f", hdr, 76, *pixdim)                      # pixdim
    struct.pack_into("<f", hdr, 108, 352.0)                        # vox_offset
    struct.pack_into("<f", hdr, 112, 1.0)                          # scl_slope
    struct.pack_into("<4s", hdr, 344, b"n+1\x00")                  # magic
    payload = bytes(hdr) + b"\x00\x00\x00\x00" + data.tobytes(order="C")
    if path.name.lower().endswith(".gz"):
        # mtime=0 keeps gzip output byte-stable across runs
        path.write_bytes(gzip.compress(payload, mtime=0))
    else:
        path.write_bytes(payload)


def _read_nifti(path: Path) -> tuple[np.ndarray, tuple[float, float, float]]:
    blob = path.read_bytes()
    if blob[:2] == b"\x1f\x8b":
        blob = gzip.decompress(blob)
    if len(blob) < _HDR_SIZE + 4:
        raise FormatError(f"{path}: truncated NIfTI header")
    order = "<"
    (sizeof_hdr,) = struct.unpack_from("<i", blob, 0)
    if sizeof_hdr != _HDR_SIZE:
        (sizeof_hdr,) = struct.unpack_from(">i", blob, 0)
        if sizeof_hdr != _HDR_SIZE:
            raise FormatError(f"{path}: field sizeof_hdr={sizeof_hdr}, not a NIfTI-1 file")
        order = ">"
    magic = struct.unpack_from("4s", blob, 344)[0]
    if magic not in (b"n+1\x00", b"ni1\x00"):
        raise FormatError(f"{path}: bad magic {magic!r}")
    dim = struct.unpack_from(order + "8h", blob, 40)
    ndim = dim[0]
    if not 1 <= ndim <= 7:
        raise FormatError(f"{path}: field dim[0]={ndim} out of range")
    shape = tuple(dim[1 : 1 + ndim])
    if ndim > 3 and any(s != 1 for s in shape[3:]):
        raise FormatError(f"{path}: field dim describes a {ndim}D image; only 3D is supported")
    shape = tuple(shape[:3]) if ndim >= 3 else tuple(shape) + (1,) * (3 - ndim)
    (datatype,) = struct.unpack_from(order + "h", blob, 70)
    if datatype not in _NIFTI_DTYPES:
        raise FormatError(f"{path}: field datatype={datatype} is not supported")
    dtype = np.dtype(_NIFTI_DTYPES[datatype]).newbyteorder(order)
    pixdim = struct.unpack_from(order + "8f", blob, 76)
    (vox_offset,) = struct.unpack_from(order + "f", blob, 108)
    offset = int(vox_offset) if vox_offset >= _HDR_SIZE else _HDR_SIZE + 4
    count = int(np.prod(shape))
    end = offset + count * dtype.itemsize
    if end > len(blob):
        raise FormatError(
            f"{path}: field dim implies {count} voxels but payload holds "
            f"{(len(blob) - offset) // dtype.itemsize}"
        )
    arr = np.frombuffer(blob[offset:end], dtype=dtype).reshape(shape)
    (slope,) = struct.unpack_from(order + "f", blob, 112)
    (inter,) = struct.unpack_from(order + "f", blob, 116)
    if slope not in (0.0, 1.0) or inter != 0.0:
        arr = arr * slope + inter
    spacing = tuple(abs(p) if p != 0 else 1.0 for p in pixdim[1:4])
    return arr, spacing


# -- deformation field files --------------------------------------------------

def save_field(field, path) -> None:
    """Write a 2D deformation field: du then dv concatenated, plus sidecar."""
    json_path, raw_path = _sidecar_paths(path)
    du = np.ascontiguousarray(field.du, dtype="<f4")
    dv = np.ascontiguousarray(field.dv, dtype="<f4")
    raw_path.write_bytes(du.tobytes() + dv.tobytes())
    meta = {
        "shape": list(du.shape),
        "order": ["du", "dv"],
        "dtype": "<f4",
        "data_file": raw_path.name,
    }
    json_path.write_text(json.dumps(meta, sort_keys=True, indent=1) + "\n")


def load_field(path) -> tuple[np.ndarray, np.ndarray]:
    """Read a field file; returns (du, dv) as float32 arrays."""
    json_path, raw_path = _sidecar_paths(path)
    try:
        meta = json.loads(json_path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"cannot read field sidecar {json_path}: {exc}") from exc
    if meta.get("order") != ["du", "dv"]:
        raise FormatError(f"{json_path}: field 'order' must be ['du', 'dv']")
    shape = tuple(int(s) for s in meta["shape"])
    dtype = np.dtype(meta.get("dtype", "<f4"))
    raw = (json_path.parent / meta.get("data_file", raw_path.name)).read_bytes()
    n = int(np.prod(shape))
    if len(raw) != 2 * n * dtype.itemsize:
        raise FormatError(f"{json_path}: payload size mismatch for field 'shape'={shape}")
    flat = np.frombuffer(raw, dtype=dtype)
    return flat[:n].reshape(shape).copy(), flat[n:].reshape(shape).copy()


# -- dataset manifest ---------------------------------------------------------

@dataclass
class ManifestEntry:
    """One dataset volume. Annotated entries carry slice indices (m, n) into
    their dense label file; training code reads only those two slices."""

    volume_path: str
    label_path: str | None = None
    annotated: bool = False
    m: int | None = None
    n: int | None = None

    def to_json(self) -> dict:
        out = {"volume_path": self.volume_path, "annotated": self.annotated}
        if self.label_path is not None:
            out["label_path"] = self.label_path
        if self.m is not None:
            out["m"] = self.m
        if self.n is not None:
            out["n"] = self.n
        return out


def load_manifest(path) -> list[ManifestEntry]:
    path = Path(path)
    try:
        rows = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"malformed manifest {path}: {exc}") from exc
    if not isinstance(rows, list):
        raise FormatError(f"manifest {path} must be a JSON list of entries")
    entries = []
    for i, row in enumerate(rows):
        if "volume_path" not in row:
            raise FormatError(f"manifest {path} entry {i} is missing field 'volume_path'")
        entry = ManifestEntry(
            volume_path=str(path.parent / row["volume_path"]),
            label_path=str(path.parent / row["label_path"]) if row.get("label_path") else None,
            annotated=bool(row.get("annotated", False)),
            m=row.get("m"),
            n=row.get("n"),
        )
        if entry.annotated and (entry.label_path is None or entry.m is None or entry.n is None):
            raise FormatError(
                f"manifest {path} entry {i}: annotated entries need label_path, m and n"
            )
        entries.append(entry)
    return entries


def save_manifest(entries: list[ManifestEntry], path) -> None:
    """Write entries with paths relative to the manifest's directory."""
    import os

    path = Path(path)
    base = path.parent.resolve()
    rows = []
    for e in entries:
        row = e.to_json()
        row["volume_path"] = os.path.relpath(Path(row["volume_path"]).resolve(), base)
        if "label_path" in row:
            row["label_path"] = os.path.relpath(Path(row["label_path"]).resolve(), base)
        rows.append(row)
    path.write_text(json.dumps(rows, sort_keys=True, indent=1) + "\n")
