"""
Binary volume (SFV1) and displacement-field (SFF1) files.

Layout: uint32 little-endian header length N, N bytes of UTF-8 JSON header,
then the payload as little-endian float32 in C order (H fastest), channel
interleaved for fields.
"""
import json
import logging
import struct
from pathlib import Path
from typing import Any, Dict, Tuple, Union

import numpy as np

from fields.grid import DisplacementField, GridSpec, LabelVolume, Volume, LABEL_NAMES
from utils.errors import FormatError, ValidationError
from utils.helpers import FileHelper

logger = logging.getLogger(__name__)

VOLUME_MAGIC = "SFV1"
FIELD_MAGIC = "SFF1"
VOXEL_ORDER = "row-major, H fastest"
LENGTH_PREFIX = 4

PathLike = Union[str, Path]


def write_container(path: PathLike, header: Dict[str, Any], payload: bytes) -> Path:
    path = Path(path)
    FileHelper.ensure_directory_exists(path.parent)
    encoded = json.dumps(header, sort_keys=True).encode('utf-8')
    with open(path, 'wb') as f:
        f.write(struct.pack('<I', len(encoded)))
        f.write(encoded)
        f.write(payload)
    return path


def read_container(path: PathLike) -> Tuple[Dict[str, Any], bytes, int]:
    """(header, payload bytes, payload byte offset); header is validated as JSON only"""
    path = Path(path)
    if not path.exists():
        raise FormatError("file not found", path=path)
    raw = path.read_bytes()
    if len(raw) < LENGTH_PREFIX:
        raise FormatError("file too short for header length", path=path, byte_offset=0,
                          expected=f">= {LENGTH_PREFIX} bytes", actual=f"{len(raw)} bytes")
    (length,) = struct.unpack_from('<I', raw, 0)
    end = LENGTH_PREFIX + length
    if end > len(raw):
        raise FormatError("header extends past end of file", path=path, byte_offset=LENGTH_PREFIX,
                          expected=f"{length} header bytes", actual=f"{len(raw) - LENGTH_PREFIX} bytes")
    try:
        header = json.loads(raw[LENGTH_PREFIX:end].decode('utf-8'))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"header is not valid JSON: {e}", path=path, byte_offset=LENGTH_PREFIX) from e
    if not isinstance(header, dict):
        raise FormatError("header must be a JSON object", path=path, byte_offset=LENGTH_PREFIX)
    return header, raw[end:], end


def _grid_header(magic: str, grid: GridSpec, channels: int) -> Dict[str, Any]:
    return {
        'magic': magic,
        'dims': list(grid.dims),
        'spacing': list(grid.spacing),
        'origin': list(grid.origin),
        'dtype': 'f32',
        'channels': channels,
        'voxel_order': VOXEL_ORDER,
    }


def _parse_grid_header(path: Path, header: Dict[str, Any], magic: str, channels: int) -> GridSpec:
    if header.get('magic') != magic:
        raise FormatError("unexpected magic", path=path, byte_offset=LENGTH_PREFIX,
                          expected=magic, actual=header.get('magic'))
    if header.get('dtype') != 'f32':
        raise FormatError("unsupported dtype", path=path, byte_offset=LENGTH_PREFIX,
                          expected='f32', actual=header.get('dtype'))
    if header.get('channels') != channels:
        raise FormatError("channel count does not match magic", path=path, byte_offset=LENGTH_PREFIX,
                          expected=channels, actual=header.get('channels'))
    dims = header.get('dims')
    if (not isinstance(dims, list) or len(dims) != 3
            or not all(isinstance(d, int) and not isinstance(d, bool) for d in dims)):
        raise FormatError("dims must be three integers", path=path, byte_offset=LENGTH_PREFIX,
                          actual=dims)
    try:
        return GridSpec(dims, header.get('spacing'), header.get('origin'))
    except (ValidationError, TypeError) as e:
        raise FormatError(f"invalid grid in header: {e}", path=path, byte_offset=LENGTH_PREFIX,
                          actual={'dims': dims, 'spacing': header.get('spacing')}) from e


def _decode_payload(path: Path, payload: bytes, offset: int, shape: Tuple[int, ...]) -> np.ndarray:
    expected = int(np.prod(shape)) * 4
    if len(payload) != expected:
        kind = "truncated payload" if len(payload) < expected else "trailing bytes after payload"
        raise FormatError(kind, path=path, byte_offset=offset + min(len(payload), expected),
                          expected=f"{expected} bytes", actual=f"{len(payload)} bytes")
    data = np.frombuffer(payload, dtype='<f4').reshape(shape)
    finite = np.isfinite(data)
    if not np.all(finite):
        first = int(np.flatnonzero(~finite.ravel())[0])
        raise FormatError("non-finite value in payload", path=path, byte_offset=offset + 4 * first)
    return data.astype(np.float64)


def write_volume(path: PathLike, volume: Volume) -> Path:
    payload = np.ascontiguousarray(volume.data, dtype='<f4').tobytes()
    return write_container(path, _grid_header(VOLUME_MAGIC, volume.grid, 1), payload)


def read_volume(path: PathLike) -> Volume:
    path = Path(path)
    header, payload, offset = read_container(path)
    grid = _parse_grid_header(path, header, VOLUME_MAGIC, 1)
    return Volume(grid, _decode_payload(path, payload, offset, grid.dims))


def write_labels(path: PathLike, labels: LabelVolume) -> Path:
    payload = np.ascontiguousarray(labels.labels, dtype='<f4').tobytes()
    return write_container(path, _grid_header(VOLUME_MAGIC, labels.grid, 1), payload)


def read_labels(path: PathLike) -> LabelVolume:
    path = Path(path)
    header, payload, offset = read_container(path)
    grid = _parse_grid_header(path, header, VOLUME_MAGIC, 1)
    data = _decode_payload(path, payload, offset, grid.dims)
    bad = ~np.isin(data, list(LABEL_NAMES))
    if np.any(bad):
        first = int(np.flatnonzero(bad.ravel())[0])
        raise FormatError("label value outside the code book", path=path,
                          byte_offset=offset + 4 * first, expected=sorted(LABEL_NAMES),
                          actual=float(data.ravel()[first]))
    return LabelVolume(grid, data.astype(np.uint8))


def write_field(path: PathLike, field: DisplacementField) -> Path:
    payload = np.ascontiguousarray(field.vectors, dtype='<f4').tobytes()
    return write_container(path, _grid_header(FIELD_MAGIC, field.grid, 3), payload)


def read_field(path: PathLike) -> DisplacementField:
    path = Path(path)
    header, payload, offset = read_container(path)
    grid = _parse_grid_header(path, header, FIELD_MAGIC, 3)
    return DisplacementField(grid, _decode_payload(path, payload, offset, grid.dims + (3,)))


def write_pgm(path: PathLike, image: np.ndarray) -> Path:
    """8-bit binary PGM of a 2D slice, min-max scaled"""
    image = np.asarray(image, dtype=np.float64)
    lo, hi = float(image.min()), float(image.max())
    scaled = np.zeros(image.shape) if hi <= lo else (image - lo) / (hi - lo)
    pixels = np.round(scaled * 255).astype(np.uint8)
    path = Path(path)
    FileHelper.ensure_directory_exists(path.parent)
    with open(path, 'wb') as f:
        f.write(f"P5\n{pixels.shape[1]} {pixels.shape[0]}\n255\n".encode('ascii'))
        f.write(pixels.tobytes())
    return path
