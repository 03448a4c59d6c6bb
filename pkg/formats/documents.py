"""
JSON documents: keypoint sets and dataset manifests
"""
from dataclasses import dataclass, field
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np

from fields.grid import GridSpec
from keypoints.keypoint_set import KeypointSet
from utils.errors import FormatError, ValidationError
from utils.helpers import FileHelper

logger = logging.getLogger(__name__)

KEYPOINTS_FORMAT = "brainshift-keypoints/1"
MANIFEST_FORMAT = "brainshift-manifest/1"
SPLITS = ('train', 'val', 'test')

PathLike = Union[str, Path]


def write_keypoints(path: PathLike, keypoints: KeypointSet,
                    metadata: Optional[Dict[str, Any]] = None) -> Path:
    document = {
        'format': KEYPOINTS_FORMAT,
        'grid': keypoints.grid.to_dict(),
        'keypoints': [{'x': x.tolist(), 'd': d.tolist()}
                      for x, d in zip(keypoints.points, keypoints.displacements)],
        'metadata': metadata or {},
    }
    return FileHelper.save_json(document, path)


def read_keypoints(path: PathLike) -> KeypointSet:
    document = FileHelper.load_json(path)
    if not isinstance(document, dict) or document.get('format') != KEYPOINTS_FORMAT:
        raise FormatError("not a keypoint document", path=path, expected=KEYPOINTS_FORMAT,
                          actual=document.get('format') if isinstance(document, dict) else type(document).__name__)
    try:
        grid = GridSpec.from_dict(document['grid'])
        entries = document['keypoints']
        points = np.array([e['x'] for e in entries], dtype=np.float64).reshape(-1, 3)
        displacements = np.array([e['d'] for e in entries], dtype=np.float64).reshape(-1, 3)
    except (KeyError, TypeError, ValueError) as e:
        raise FormatError(f"malformed keypoint document: {e}", path=path) from e
    return KeypointSet(points, displacements, grid)


def read_keypoint_metadata(path: PathLike) -> Dict[str, Any]:
    return FileHelper.load_json(path).get('metadata', {})


@dataclass
class ManifestCase:
    case_id: str
    index: int
    seed: int
    split: str
    image: str
    labels: str
    fields: List[str]
    gravities: List[List[float]]
    base_gravity: List[float]
    craniotomy_point: List[float]
    tumor_center: List[float]
    tumor_radius: float
    edema_thickness: float

    def to_dict(self) -> Dict[str, Any]:
        return {
            'case_id': self.case_id,
            'index': self.index,
            'seed': self.seed,
            'split': self.split,
            'image': self.image,
            'labels': self.labels,
            'fields': list(self.fields),
            'gravities': [list(map(float, g)) for g in self.gravities],
            'base_gravity': list(map(float, self.base_gravity)),
            'craniotomy_point': list(map(float, self.craniotomy_point)),
            'tumor_center': list(map(float, self.tumor_center)),
            'tumor_radius': float(self.tumor_radius),
            'edema_thickness': float(self.edema_thickness),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'ManifestCase':
        return cls(**{name: data[name] for name in cls.__dataclass_fields__})


@dataclass
class Manifest:
    """Dataset index; artifact paths are relative to root"""

    seed: int
    grid: GridSpec
    sim_params: Dict[str, Any]
    split_fractions: List[float]
    cases: List[ManifestCase] = field(default_factory=list)
    root: Path = Path('.')

    def resolve(self, relative: str) -> Path:
        return self.root / relative

    def cases_in(self, split: str) -> List[ManifestCase]:
        if split == 'all':
            return list(self.cases)
        if split not in SPLITS:
            raise ValidationError(f"unknown split '{split}'")
        return [c for c in self.cases if c.split == split]

    def split_counts(self) -> Dict[str, int]:
        return {s: len(self.cases_in(s)) for s in SPLITS}

    def to_dict(self) -> Dict[str, Any]:
        return {
            'format': MANIFEST_FORMAT,
            'seed': self.seed,
            'grid': self.grid.to_dict(),
            'sim_params': self.sim_params,
            'split_fractions': list(self.split_fractions),
            'cases': [c.to_dict() for c in self.cases],
        }


def write_manifest(path: PathLike, manifest: Manifest) -> Path:
    return FileHelper.save_json(manifest.to_dict(), path)


def read_manifest(path: PathLike, check_paths: bool = True) -> Manifest:
    path = Path(path)
    document = FileHelper.load_json(path)
    if not isinstance(document, dict) or document.get('format') != MANIFEST_FORMAT:
        raise FormatError("not a dataset manifest", path=path, expected=MANIFEST_FORMAT,
                          actual=document.get('format') if isinstance(document, dict) else None)
    try:
        manifest = Manifest(
            seed=int(document['seed']),
            grid=GridSpec.from_dict(document['grid']),
            sim_params=dict(document['sim_params']),
            split_fractions=list(document['split_fractions']),
            cases=[ManifestCase.from_dict(c) for c in document['cases']],
            root=path.parent,
        )
    except (KeyError, TypeError, ValueError) as e:
        raise FormatError(f"malformed manifest: {e}", path=path) from e

    for case in manifest.cases:
        if case.split not in SPLITS:
            raise FormatError(f"case {case.case_id} has unknown split '{case.split}'", path=path)
        if len(case.fields) != len(case.gravities):
            raise FormatError(f"case {case.case_id} lists {len(case.fields)} fields "
                              f"but {len(case.gravities)} gravity vectors", path=path)
        if check_paths:
            for relative in [case.image, case.labels, *case.fields]:
                if not manifest.resolve(relative).exists():
                    raise FormatError(f"manifest entry for {case.case_id} points to a missing file",
                                      path=manifest.resolve(relative))
    return manifest
