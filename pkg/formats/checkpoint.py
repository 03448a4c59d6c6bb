"""
Model checkpoints: JSON header (config, parameter names and shapes, seed,
epoch) followed by little-endian float64 parameter blobs in header order.
"""
from collections import OrderedDict
import logging
from pathlib import Path
from typing import Any, Dict, Tuple, Union

import numpy as np

from formats.volume_io import read_container, write_container, LENGTH_PREFIX
from utils.errors import FormatError

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = "SFC1"


def write_checkpoint(path: Union[str, Path], parameters: "OrderedDict[str, np.ndarray]",
                     metadata: Dict[str, Any]) -> Path:
    entries = []
    blobs = []
    for name, value in parameters.items():
        array = np.ascontiguousarray(value, dtype='<f8')
        entries.append({'name': name, 'shape': list(array.shape)})
        blobs.append(array.tobytes())
    header = dict(metadata)
    header['magic'] = CHECKPOINT_MAGIC
    header['dtype'] = 'f64'
    header['parameters'] = entries
    path = write_container(path, header, b''.join(blobs))
    logger.debug(f"Wrote checkpoint with {len(entries)} tensors to {path}")
    return path


def read_checkpoint(path: Union[str, Path]) -> Tuple[Dict[str, Any], "OrderedDict[str, np.ndarray]"]:
    path = Path(path)
    header, payload, offset = read_container(path)
    if header.get('magic') != CHECKPOINT_MAGIC:
        raise FormatError("unexpected magic", path=path, byte_offset=LENGTH_PREFIX,
                          expected=CHECKPOINT_MAGIC, actual=header.get('magic'))
    entries = header.get('parameters')
    if not isinstance(entries, list):
        raise FormatError("checkpoint header lacks a parameter list", path=path, byte_offset=LENGTH_PREFIX)

    sizes = [int(np.prod(e['shape'])) * 8 for e in entries]
    if sum(sizes) != len(payload):
        raise FormatError("parameter payload size mismatch", path=path,
                          byte_offset=offset + min(sum(sizes), len(payload)),
                          expected=f"{sum(sizes)} bytes", actual=f"{len(payload)} bytes")
    parameters = OrderedDict()
    position = 0
    for entry, size in zip(entries, sizes):
        blob = np.frombuffer(payload[position:position + size], dtype='<f8')
        if not np.all(np.isfinite(blob)):
            raise FormatError(f"non-finite values in parameter {entry['name']}", path=path,
                              byte_offset=offset + position)
        parameters[entry['name']] = blob.reshape(entry['shape']).astype(np.float64)
        position += size
    return header, parameters
