"""
On-disk formats: volumes, fields, keypoints, manifests and checkpoints
"""

from .volume_io import (
    read_volume, write_volume, read_labels, write_labels, read_field, write_field, write_pgm,
)
from .documents import (
    Manifest, ManifestCase, read_keypoints, write_keypoints, read_manifest, write_manifest,
)
from .checkpoint import read_checkpoint, write_checkpoint

__all__ = [
    'read_volume', 'write_volume',
    'read_labels', 'write_labels',
    'read_field', 'write_field',
    'write_pgm',
    'Manifest', 'ManifestCase',
    'read_keypoints', 'write_keypoints',
    'read_manifest', 'write_manifest',
    'read_checkpoint', 'write_checkpoint',
]
