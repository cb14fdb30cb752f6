"""Volume and field files.

Canonical format: a JSON header next to a raw little-endian float32 payload,
x-fastest (``name.json`` + ``name.raw``). NIfTI-1 (``.nii`` / ``.nii.gz``,
single file) can be read but not written.
"""

from __future__ import annotations

import gzip
import json
import struct
from pathlib import Path
from typing import Union

import numpy as np

from .errors import FormatError
from .transform import DeformationField
from .volume import Volume

PathLike = Union[str, Path]

FLOAT = np.dtype("<f4")
NIFTI_HEADER_BYTES = 348

# NIfTI datatype code -> numpy dtype (byte order added at read time)
NIFTI_DTYPES = {
    2: "u1", 4: "i2", 8: "i4", 16: "f4", 64: "f8",
    256: "i1", 512: "u2", 768: "u4", 1024: "i8", 1280: "u8",
}


def _stem(path: PathLike) -> Path:
    p = Path(path)
    return p.with_suffix("") if p.suffix in (".json", ".raw") else p


def header_path(path: PathLike) -> Path:
    return _stem(path).with_suffix(".json")


def payload_path(path: PathLike) -> Path:
    return _stem(path).with_suffix(".raw")


def _is_nifti(path: PathLike) -> bool:
    name = str(path).lower()
    return name.endswith(".nii") or name.endswith(".nii.gz")


# -- raw + JSON -------------------------------------------------------------


def _write_raw(path: PathLike, header: dict, payload: np.ndarray) -> None:
    hp, pp = header_path(path), payload_path(path)
    hp.parent.mkdir(parents=True, exist_ok=True)
    header = dict(header, dtype="f32", order="x-fastest", payload=pp.name)
    hp.write_text(json.dumps(header, indent=2) + "\n")
    pp.write_bytes(payload.astype(FLOAT).tobytes())


def _read_header(path: PathLike) -> dict:
    hp = header_path(path)
    try:
        text = hp.read_text()
    except OSError as exc:
        raise FormatError(f"{hp}: cannot read header ({exc.strerror})") from exc
    try:
        header = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{hp}: malformed JSON header at byte {exc.pos}: {exc.msg}") from exc
    if not isinstance(header, dict):
        raise FormatError(f"{hp}: header must be a JSON object")
    for key in ("dims", "spacing"):
        value = header.get(key)
        if not (isinstance(value, list) and len(value) == 3):
            raise FormatError(f"{hp}: '{key}' must be a list of 3 numbers")
    if not all(isinstance(n, int) and n >= 1 for n in header["dims"]):
        raise FormatError(f"{hp}: dims must be positive integers, got {header['dims']}")
    if header.get("dtype", "f32") != "f32":
        raise FormatError(f"{hp}: unsupported dtype {header['dtype']!r}, only 'f32'")
    if header.get("order", "x-fastest") != "x-fastest":
        raise FormatError(f"{hp}: unsupported order {header['order']!r}, only 'x-fastest'")
    return header


def _read_payload(path: PathLike, header: dict, count: int) -> np.ndarray:
    pp = header_path(path).with_name(header.get("payload", payload_path(path).name))
    try:
        raw = pp.read_bytes()
    except OSError as exc:
        raise FormatError(f"{pp}: cannot read payload ({exc.strerror})") from exc
    expected = count * FLOAT.itemsize
    if len(raw) != expected:
        raise FormatError(
            f"{pp}: payload size mismatch: expected {expected} bytes, found {len(raw)} "
            f"(stream ends at byte offset {min(len(raw), expected)})"
        )
    return np.frombuffer(raw, dtype=FLOAT).astype(np.float64)


def write_volume(vol: Volume, path: PathLike) -> None:
    """Write ``vol`` as float32; the round trip is exact for float32-representable data."""
    if _is_nifti(path):
        raise FormatError(f"{path}: NIfTI output is not supported; use the raw+JSON format")
    header = {"dims": list(vol.dims), "spacing": list(vol.spacing)}
    _write_raw(path, header, vol.data.ravel(order="F"))


def read_volume(path: PathLike) -> Volume:
    if _is_nifti(path):
        return read_nifti(path)
    header = _read_header(path)
    if header.get("components", 1) != 1:
        raise FormatError(f"{header_path(path)}: volume header declares {header['components']} components, expected 1")
    dims = tuple(header["dims"])
    data = _read_payload(path, header, int(np.prod(dims)))
    return Volume(data.reshape(dims, order="F"), tuple(float(s) for s in header["spacing"]))


def write_field(field: DeformationField, path: PathLike) -> None:
    """Displacements in voxels, the 3 components interleaved per voxel."""
    header = {"dims": list(field.dims), "spacing": list(field.spacing), "components": 3, "units": "voxel"}
    _write_raw(path, header, np.moveaxis(field.disp, -1, 0).ravel(order="F"))


def read_field(path: PathLike) -> DeformationField:
    header = _read_header(path)
    if header.get("components") != 3:
        raise FormatError(f"{header_path(path)}: field header declares components={header.get('components')!r}, expected 3")
    dims = tuple(header["dims"])
    data = _read_payload(path, header, 3 * int(np.prod(dims)))
    disp = np.moveaxis(data.reshape((3,) + dims, order="F"), 0, -1)
    return DeformationField(np.ascontiguousarray(disp), tuple(float(s) for s in header["spacing"]))


def write_json(obj: dict, path: PathLike) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# -- NIfTI-1 (read only) ----------------------------------------------------


def _unpack(fmt: str, buf: bytes, offset: int, what: str):
    try:
        return struct.unpack_from(fmt, buf, offset)
    except struct.error as exc:
        raise FormatError(f"truncated NIfTI header reading {what} at byte offset {offset}") from exc


def read_nifti(path: PathLike) -> Volume:
    """Read a single-file NIfTI-1 volume (optionally gzipped) as float32 values."""
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"{path}: cannot read file ({exc.strerror})") from exc
    if raw[:2] == b"\x1f\x8b":
        try:
            raw = gzip.decompress(raw)
        except (OSError, EOFError) as exc:
            raise FormatError(f"{path}: corrupt gzip stream ({exc})") from exc
    if len(raw) < NIFTI_HEADER_BYTES:
        raise FormatError(f"{path}: file has {len(raw)} bytes, shorter than the {NIFTI_HEADER_BYTES}-byte NIfTI-1 header")

    (size_le,) = _unpack("<i", raw, 0, "sizeof_hdr")
    (size_be,) = _unpack(">i", raw, 0, "sizeof_hdr")
    if size_le == NIFTI_HEADER_BYTES:
        end = "<"
    elif size_be == NIFTI_HEADER_BYTES:
        end = ">"
    else:
        raise FormatError(f"{path}: sizeof_hdr at byte offset 0 is {size_le}, expected {NIFTI_HEADER_BYTES}")

    magic = raw[344:348]
    if magic == b"ni1\x00":
        raise FormatError(f"{path}: magic 'ni1' at byte offset 344 denotes a header/image pair; only single-file 'n+1' is supported")
    if magic != b"n+1\x00":
        raise FormatError(f"{path}: bad magic {magic!r} at byte offset 344, expected b'n+1\\x00'")

    dim = _unpack(end + "8h", raw, 40, "dim")
    ndim = dim[0]
    if not 1 <= ndim <= 7:
        raise FormatError(f"{path}: dim[0]={ndim} at byte offset 40 is out of range 1..7")
    sizes = list(dim[1 : ndim + 1]) + [1] * (3 - min(ndim, 3))
    if any(n < 1 for n in sizes):
        raise FormatError(f"{path}: non-positive dimension in dim={dim} at byte offset 42")
    if any(n != 1 for n in sizes[3:]):
        raise FormatError(f"{path}: only 3-D volumes are supported, got dim={dim[: ndim + 1]} at byte offset 40")
    dims = tuple(int(n) for n in sizes[:3])

    (code,) = _unpack(end + "h", raw, 70, "datatype")
    if code not in NIFTI_DTYPES:
        raise FormatError(f"{path}: unsupported datatype code {code} at byte offset 70")
    dtype = np.dtype(end + NIFTI_DTYPES[code])

    pixdim = _unpack(end + "8f", raw, 76, "pixdim")
    spacing = tuple(abs(float(s)) if s != 0 else 1.0 for s in pixdim[1:4])
    (vox_offset,) = _unpack(end + "f", raw, 108, "vox_offset")
    slope, inter = _unpack(end + "2f", raw, 112, "scl_slope/scl_inter")

    start = int(vox_offset)
    if start < NIFTI_HEADER_BYTES:
        raise FormatError(f"{path}: vox_offset={vox_offset} at byte offset 108 points inside the header")
    nbytes = int(np.prod(dims)) * dtype.itemsize
    if len(raw) < start + nbytes:
        raise FormatError(
            f"{path}: image data needs {nbytes} bytes from byte offset {start}, "
            f"but the file ends at byte offset {len(raw)}"
        )
    data = np.frombuffer(raw, dtype=dtype, count=int(np.prod(dims)), offset=start).astype(np.float64)
    if slope != 0 and np.isfinite(slope) and (slope, inter) != (1.0, 0.0):
        data = data * slope + inter
    data = data.astype(np.float32).astype(np.float64)
    return Volume(data.reshape(dims, order="F"), spacing)
