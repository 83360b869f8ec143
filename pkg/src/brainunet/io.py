"""Volume I/O: NIfTI-1 reading/writing, domain containers, modality stacking.

Conventions used throughout the package:

* Label integers: 0 = background, 1 = non-enhancing tumor core (NETC),
  2 = surrounding non-enhancing FLAIR hyperintensity (SNFH), 3 = enhancing
  tumor (ET).  This matches the public BraTS challenge convention.
* Model input channels are stacked in the fixed order (FLAIR, T1CE, T2W).
  Native T1w is deliberately not part of the input contract.
* Files are NIfTI-1, optionally gzip-compressed (.nii / .nii.gz).
"""

from __future__ import annotations

import gzip
import io as _io
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

CHANNEL_ORDER = ("flair", "t1ce", "t2w")
LABEL_VALUES = (0, 1, 2, 3)

# Tolerance for deciding two modalities share the same geometry.  Images
# registered to a common template have identical affines; this only absorbs
# float round-off.
AFFINE_ATOL = 1e-4


class NiftiFormatError(ValueError):
    """Raised for malformed or unsupported NIfTI-1 content."""


class GeometryMismatchError(ValueError):
    """Raised when volumes that must share a grid do not."""


def _default_affine(spacing):
    aff = np.eye(4)
    aff[0, 0], aff[1, 1], aff[2, 2] = spacing
    return aff


def _check_geometry(data, spacing, affine, *, integer=False):
    if data.ndim != 3:
        raise ValueError(f"expected a 3D array, got shape {data.shape}")
    if not integer and not np.all(np.isfinite(data)):
        raise ValueError("volume contains NaN or Inf values")
    if len(spacing) != 3 or any(s <= 0 for s in spacing):
        raise ValueError(f"spacing must be three positive values, got {spacing}")
    if affine.shape != (4, 4):
        raise ValueError(f"affine must be 4x4, got {affine.shape}")


@dataclass
class ScalarVolume:
    """A single-modality 3D image with voxel spacing and affine geometry.

    ``data`` is indexed [D, H, W]; ``affine`` maps voxel indices to mm world
    coordinates; ``spacing`` is the per-axis voxel size in mm.
    """

    data: np.ndarray
    spacing: tuple = (1.0, 1.0, 1.0)
    affine: np.ndarray = None

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if not np.issubdtype(self.data.dtype, np.floating):
            self.data = self.data.astype(np.float32)
        self.spacing = tuple(float(s) for s in self.spacing)
        if self.affine is None:
            self.affine = _default_affine(self.spacing)
        self.affine = np.asarray(self.affine, dtype=np.float64)
        _check_geometry(self.data, self.spacing, self.affine)

    @property
    def shape(self):
        return self.data.shape


@dataclass
class MultiModalVolume:
    """Stacked (FLAIR, T1CE, T2W) image, ``data`` indexed [3, D, H, W]."""

    data: np.ndarray
    spacing: tuple = (1.0, 1.0, 1.0)
    affine: np.ndarray = None

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if not np.issubdtype(self.data.dtype, np.floating):
            self.data = self.data.astype(np.float32)
        if self.data.ndim != 4 or self.data.shape[0] != len(CHANNEL_ORDER):
            raise ValueError(
                f"expected [3, D, H, W] data in {CHANNEL_ORDER} order, "
                f"got shape {self.data.shape}"
            )
        if not np.all(np.isfinite(self.data)):
            raise ValueError("volume contains NaN or Inf values")
        self.spacing = tuple(float(s) for s in self.spacing)
        if self.affine is None:
            self.affine = _default_affine(self.spacing)
        self.affine = np.asarray(self.affine, dtype=np.float64)
        if self.affine.shape != (4, 4):
            raise ValueError(f"affine must be 4x4, got {self.affine.shape}")
        if len(self.spacing) != 3 or any(s <= 0 for s in self.spacing):
            raise ValueError(f"spacing must be three positive values, got {self.spacing}")

    @property
    def spatial_shape(self):
        return self.data.shape[1:]

    def channel(self, name: str) -> np.ndarray:
        return self.data[CHANNEL_ORDER.index(name)]


@dataclass
class LabelMask:
    """Integer tumor-subregion map, values in {0, 1, 2, 3}, indexed [D, H, W]."""

    data: np.ndarray
    spacing: tuple = (1.0, 1.0, 1.0)
    affine: np.ndarray = None

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if not np.issubdtype(self.data.dtype, np.integer):
            raise ValueError(f"mask data must be integer, got dtype {self.data.dtype}")
        self.spacing = tuple(float(s) for s in self.spacing)
        if self.affine is None:
            self.affine = _default_affine(self.spacing)
        self.affine = np.asarray(self.affine, dtype=np.float64)
        _check_geometry(self.data, self.spacing, self.affine, integer=True)
        bad = np.setdiff1d(np.unique(self.data), LABEL_VALUES)
        if bad.size:
            raise ValueError(f"mask contains labels outside {LABEL_VALUES}: {bad.tolist()}")

    @property
    def shape(self):
        return self.data.shape


# --------------------------------------------------------------------------
# NIfTI-1 reader / writer
# --------------------------------------------------------------------------

_HEADER_DTD = [
    ("sizeof_hdr", "i4"),
    ("data_type", "S10"),
    ("db_name", "S18"),
    ("extents", "i4"),
    ("session_error", "i2"),
    ("regular", "S1"),
    ("dim_info", "u1"),
    ("dim", "i2", (8,)),
    ("intent_p1", "f4"),
    ("intent_p2", "f4"),
    ("intent_p3", "f4"),
    ("intent_code", "i2"),
    ("datatype", "i2"),
    ("bitpix", "i2"),
    ("slice_start", "i2"),
    ("pixdim", "f4", (8,)),
    ("vox_offset", "f4"),
    ("scl_slope", "f4"),
    ("scl_inter", "f4"),
    ("slice_end", "i2"),
    ("slice_code", "u1"),
    ("xyzt_units", "u1"),
    ("cal_max", "f4"),
    ("cal_min", "f4"),
    ("slice_duration", "f4"),
    ("toffset", "f4"),
    ("glmax", "i4"),
    ("glmin", "i4"),
    ("descrip", "S80"),
    ("aux_file", "S24"),
    ("qform_code", "i2"),
    ("sform_code", "i2"),
    ("quatern_b", "f4"),
    ("quatern_c", "f4"),
    ("quatern_d", "f4"),
    ("qoffset_x", "f4"),
    ("qoffset_y", "f4"),
    ("qoffset_z", "f4"),
    ("srow_x", "f4", (4,)),
    ("srow_y", "f4", (4,)),
    ("srow_z", "f4", (4,)),
    ("intent_name", "S16"),
    ("magic", "S4"),
]

_HEADER_SIZE = 348
_VOX_OFFSET = 352

# NIfTI datatype code <-> numpy dtype (the subset this package reads/writes)
_DTYPE_FOR_CODE = {
    2: np.uint8,
    4: np.int16,
    8: np.int32,
    16: np.float32,
    64: np.float64,
    256: np.int8,
    512: np.uint16,
    768: np.uint32,
}
_CODE_FOR_DTYPE = {np.dtype(v): k for k, v in _DTYPE_FOR_CODE.items()}


def _header_dtype(byteorder="<"):
    return np.dtype(_HEADER_DTD).newbyteorder(byteorder)


def _open_maybe_gzip(path, mode):
    if "r" in mode:
        with open(path, "rb") as fh:
            magic = fh.read(2)
        if magic == b"\x1f\x8b":
            return gzip.open(path, mode)
        return open(path, mode)
    if str(path).endswith(".gz"):
        # pin mtime and omit the filename so identical content yields
        # identical bytes wherever it is written
        raw = open(path, mode)
        gz = gzip.GzipFile(filename="", mode=mode, fileobj=raw, mtime=0)
        gz.myfileobj = raw  # close the underlying handle with the GzipFile
        return gz
    return open(path, mode)


def _quaternion_rotation(b, c, d):
    a2 = 1.0 - (b * b + c * c + d * d)
    a = np.sqrt(a2) if a2 > 0 else 0.0
    return np.array(
        [
            [a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c)],
            [2 * (b * c + a * d), a * a + c * c - b * b - d * d, 2 * (c * d - a * b)],
            [2 * (b * d - a * c), 2 * (c * d + a * b), a * a + d * d - b * b - c * c],
        ]
    )


def _affine_from_header(hdr):
    pixdim = np.abs(hdr["pixdim"][1:4]).astype(np.float64)
    pixdim[pixdim == 0] = 1.0
    if hdr["sform_code"] > 0:
        aff = np.eye(4)
        aff[0] = hdr["srow_x"]
        aff[1] = hdr["srow_y"]
        aff[2] = hdr["srow_z"]
        return aff, tuple(pixdim)
    if hdr["qform_code"] > 0:
        rot = _quaternion_rotation(
            float(hdr["quatern_b"]), float(hdr["quatern_c"]), float(hdr["quatern_d"])
        )
        qfac = float(hdr["pixdim"][0]) or 1.0
        scale = np.diag([pixdim[0], pixdim[1], pixdim[2] * qfac])
        aff = np.eye(4)
        aff[:3, :3] = rot @ scale
        aff[:3, 3] = [hdr["qoffset_x"], hdr["qoffset_y"], hdr["qoffset_z"]]
        return aff, tuple(pixdim)
    return _default_affine(pixdim), tuple(pixdim)


def _read_nifti(path):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such volume file: {path}")
    with _open_maybe_gzip(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER_SIZE:
        raise NiftiFormatError(f"malformed header: {path} holds {len(raw)} bytes, "
                               f"expected at least {_HEADER_SIZE}")
    hdr = np.frombuffer(raw[:_HEADER_SIZE], dtype=_header_dtype("<"))[0]
    if hdr["sizeof_hdr"] != _HEADER_SIZE:
        hdr = np.frombuffer(raw[:_HEADER_SIZE], dtype=_header_dtype(">"))[0]
        byteorder = ">"
        if hdr["sizeof_hdr"] != _HEADER_SIZE:
            raise NiftiFormatError(f"malformed header: {path} is not NIfTI-1 "
                                   "(bad sizeof_hdr)")
    else:
        byteorder = "<"
    magic = bytes(hdr["magic"])
    if not magic.startswith(b"n+1"):
        raise NiftiFormatError(f"malformed header: {path} has magic {magic!r}, "
                               "expected single-file NIfTI-1 ('n+1')")
    ndim = int(hdr["dim"][0])
    if not 1 <= ndim <= 7:
        raise NiftiFormatError(f"malformed header: {path} reports {ndim} dimensions")
    shape = tuple(int(d) for d in hdr["dim"][1 : 1 + ndim])
    code = int(hdr["datatype"])
    if code not in _DTYPE_FOR_CODE:
        raise NiftiFormatError(f"unsupported NIfTI datatype code {code} in {path}")
    dtype = np.dtype(_DTYPE_FOR_CODE[code]).newbyteorder(byteorder)

    offset = int(hdr["vox_offset"])
    n_bytes = int(np.prod(shape)) * dtype.itemsize
    if len(raw) < offset + n_bytes:
        raise NiftiFormatError(
            f"truncated data in {path}: need {offset + n_bytes} bytes, have {len(raw)}"
        )
    flat = np.frombuffer(raw, dtype=dtype, count=int(np.prod(shape)), offset=offset)
    # NIfTI stores the first axis fastest
    data = flat.reshape(shape, order="F")

    # drop trailing singleton dims (e.g. [D,H,W,1] exports)
    while data.ndim > 3 and data.shape[-1] == 1:
        data = data[..., 0]
    if data.ndim != 3:
        raise NiftiFormatError(
            f"non-3D payload in {path}: shape {shape} does not reduce to a volume"
        )

    slope = float(hdr["scl_slope"])
    inter = float(hdr["scl_inter"])
    if np.isfinite(slope) and slope not in (0.0, 1.0):
        data = data.astype(np.float32) * np.float32(slope) + np.float32(inter)
    elif np.isfinite(inter) and inter != 0.0 and slope != 0.0:
        data = data.astype(np.float32) + np.float32(inter)

    affine, spacing = _affine_from_header(hdr)
    return data, spacing, affine


def load_volume(path) -> ScalarVolume:
    """Load a NIfTI-1 volume (.nii or .nii.gz) as a floating-point ScalarVolume.

    Raises FileNotFoundError for a missing file and NiftiFormatError for a
    malformed header, truncated payload, or non-3D data.
    """
    data, spacing, affine = _read_nifti(path)
    if not np.issubdtype(data.dtype, np.floating):
        data = data.astype(np.float32)
    else:
        data = data.astype(data.dtype.newbyteorder("="))
    return ScalarVolume(data=data, spacing=spacing, affine=affine)


def load_mask(path) -> LabelMask:
    """Load a NIfTI-1 segmentation as an integer LabelMask."""
    data, spacing, affine = _read_nifti(path)
    if np.issubdtype(data.dtype, np.floating):
        rounded = np.rint(data)
        if not np.allclose(data, rounded, atol=1e-3):
            raise NiftiFormatError(f"{path} holds non-integer values; not a label mask")
        data = rounded.astype(np.int16)
    else:
        data = data.astype(np.int16)
    return LabelMask(data=data, spacing=spacing, affine=affine)


def save_volume(vol, path) -> None:
    """Write a ScalarVolume or LabelMask to NIfTI-1 (.nii / .nii.gz).

    Masks are written with an integer datatype (int16); float volumes keep
    their precision (float32 or float64), so a save/load round trip is
    bitwise exact.
    """
    path = Path(path)
    if isinstance(vol, LabelMask):
        data = vol.data.astype(np.int16)
    elif isinstance(vol, ScalarVolume):
        data = vol.data
        if data.dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
            data = data.astype(np.float32)
    else:
        raise TypeError(f"save_volume expects ScalarVolume or LabelMask, got {type(vol)}")

    dtype = np.dtype(data.dtype).newbyteorder("<")
    code = _CODE_FOR_DTYPE[np.dtype(data.dtype.newbyteorder("="))]

    hdr = np.zeros((), dtype=_header_dtype("<"))
    hdr["sizeof_hdr"] = _HEADER_SIZE
    hdr["regular"] = b"r"
    dims = np.ones(8, dtype=np.int16)
    dims[0] = 3
    dims[1:4] = data.shape
    hdr["dim"] = dims
    hdr["datatype"] = code
    hdr["bitpix"] = dtype.itemsize * 8
    pixdim = np.zeros(8, dtype=np.float32)
    pixdim[0] = 1.0
    pixdim[1:4] = vol.spacing
    hdr["pixdim"] = pixdim
    hdr["vox_offset"] = _VOX_OFFSET
    hdr["scl_slope"] = 1.0
    hdr["scl_inter"] = 0.0
    hdr["xyzt_units"] = 2  # mm
    hdr["descrip"] = b"brainunet"
    hdr["sform_code"] = 1
    hdr["srow_x"] = vol.affine[0]
    hdr["srow_y"] = vol.affine[1]
    hdr["srow_z"] = vol.affine[2]
    hdr["magic"] = b"n+1"

    try:
        with _open_maybe_gzip(path, "wb") as fh:
            fh.write(hdr.tobytes())
            fh.write(b"\x00" * (_VOX_OFFSET - _HEADER_SIZE))
            fh.write(np.asfortranarray(data.astype(dtype)).tobytes(order="F"))
    except OSError as exc:
        raise OSError(f"could not write volume to {path}: {exc}") from exc


def stack_modalities(flair: ScalarVolume, t1ce: ScalarVolume, t2w: ScalarVolume) -> MultiModalVolume:
    """Stack the three input modalities into a [3, D, H, W] volume.

    Channel order is fixed: 0=FLAIR, 1=T1CE, 2=T2W.  All inputs must share
    spatial dims exactly and affines within ``AFFINE_ATOL``.
    """
    ref = flair
    for name, vol in (("t1ce", t1ce), ("t2w", t2w)):
        if vol.data.shape != ref.data.shape:
            raise GeometryMismatchError(
                f"{name} has dims {vol.data.shape}, flair has {ref.data.shape}"
            )
        if not np.allclose(vol.affine, ref.affine, atol=AFFINE_ATOL):
            raise GeometryMismatchError(
                f"{name} affine differs from flair beyond {AFFINE_ATOL}"
            )
    data = np.stack([flair.data, t1ce.data, t2w.data], axis=0)
    return MultiModalVolume(data=data, spacing=ref.spacing, affine=ref.affine)


# --------------------------------------------------------------------------
# Dataset manifests
# --------------------------------------------------------------------------

@dataclass
class CaseRecord:
    """One dataset entry: per-modality paths plus optional mask and split info.

    Paths are stored relative to the manifest file.  ``split`` is a free tag
    ("train"/"val"); ``fold`` an optional cross-validation fold index.  Both
    are optional so a manifest can describe fixed splits, fold assignments,
    or a flat case list.
    """

    case_id: str
    flair: str
    t1ce: str
    t2w: str
    mask: str = None
    split: str = None
    fold: int = None

    def to_dict(self):
        d = {"case_id": self.case_id, "flair": self.flair, "t1ce": self.t1ce, "t2w": self.t2w}
        if self.mask is not None:
            d["mask"] = self.mask
        if self.split is not None:
            d["split"] = self.split
        if self.fold is not None:
            d["fold"] = int(self.fold)
        return d


def write_manifest(records, path) -> None:
    path = Path(path)
    payload = {"format": "brainunet-manifest", "version": 1,
               "cases": [r.to_dict() for r in records]}
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def read_manifest(path) -> list:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such manifest: {path}")
    payload = json.loads(path.read_text())
    if "cases" not in payload:
        raise ValueError(f"{path} is not a dataset manifest (no 'cases' key)")
    records = []
    seen = set()
    for entry in payload["cases"]:
        rec = CaseRecord(
            case_id=entry["case_id"],
            flair=entry["flair"],
            t1ce=entry["t1ce"],
            t2w=entry["t2w"],
            mask=entry.get("mask"),
            split=entry.get("split"),
            fold=entry.get("fold"),
        )
        if rec.case_id in seen:
            raise ValueError(f"duplicate case_id {rec.case_id!r} in {path}")
        seen.add(rec.case_id)
        records.append(rec)
    return records


def load_case(record: CaseRecord, base_dir):
    """Load one manifest entry into a (MultiModalVolume, LabelMask | None) pair."""
    base = Path(base_dir)
    vol = stack_modalities(
        load_volume(base / record.flair),
        load_volume(base / record.t1ce),
        load_volume(base / record.t2w),
    )
    mask = load_mask(base / record.mask) if record.mask else None
    return vol, mask
