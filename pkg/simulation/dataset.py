from dataclasses import dataclass, replace
import logging
from pathlib import Path
from typing import List, Sequence, Tuple, Union

import numpy as np

from fields.grid import DisplacementField, GridSpec, LabelVolume, Volume, check_same_grid
from formats.documents import Manifest, ManifestCase, write_manifest
from formats.volume_io import read_field, read_labels, read_volume, write_field, write_labels, write_volume
from simulation.deformation import SimParams, simulate_deformation
from simulation.gravity import estimate_gravity, find_craniotomy_point, perturb_gravity
from simulation.phantom import Phantom, make_phantom
from utils.errors import ValidationError
from utils.helpers import FileHelper, ParallelHelper, SeedHelper

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
DEFAULT_SPLIT = (0.75, 0.10, 0.15)

# stream ids for SeedHelper
PHANTOM_STREAM = 0
GRAVITY_STREAM = 1
SPLIT_STREAM = 2


def split_counts(n_cases: int, fractions: Sequence[float] = DEFAULT_SPLIT) -> Tuple[int, int, int]:
    """Train/val/test sizes; train and val rounded, test takes the rest"""
    n_train = int(round(fractions[0] * n_cases))
    n_val = int(round(fractions[1] * n_cases))
    n_val = min(n_val, n_cases - n_train)
    return n_train, n_val, n_cases - n_train - n_val


def assign_splits(n_cases: int, seed: int, fractions: Sequence[float] = DEFAULT_SPLIT) -> List[str]:
    n_train, n_val, _ = split_counts(n_cases, fractions)
    order = np.random.default_rng(SeedHelper.child_seed(seed, SPLIT_STREAM)).permutation(n_cases)
    splits = ['test'] * n_cases
    for rank, case in enumerate(order):
        if rank < n_train:
            splits[case] = 'train'
        elif rank < n_train + n_val:
            splits[case] = 'val'
    return splits


def _generate_phantom(job: Tuple[int, int, GridSpec, str, str]) -> ManifestCase:
    index, seed, grid, split, out_dir = job
    out_dir = Path(out_dir)
    case_id = f"case_{index:03d}"
    phantom_seed = SeedHelper.child_seed(seed, index, PHANTOM_STREAM)
    phantom = make_phantom(grid, phantom_seed)
    craniotomy = find_craniotomy_point(phantom)

    case_dir = FileHelper.ensure_directory_exists(out_dir / case_id)
    write_volume(case_dir / "image.sfv", phantom.image)
    write_labels(case_dir / "labels.sfv", phantom.labels)
    logger.debug(f"Generated phantom {case_id} ({split})")
    return ManifestCase(
        case_id=case_id,
        index=index,
        seed=phantom_seed,
        split=split,
        image=f"{case_id}/image.sfv",
        labels=f"{case_id}/labels.sfv",
        fields=[],
        gravities=[],
        base_gravity=estimate_gravity(phantom).tolist(),
        craniotomy_point=craniotomy.tolist(),
        tumor_center=phantom.tumor_center.tolist(),
        tumor_radius=phantom.tumor_radius,
        edema_thickness=phantom.edema_thickness,
    )


def generate_phantoms(n_cases: int, grid: GridSpec, seed: int, out_dir: Union[str, Path],
                      split: Sequence[float] = DEFAULT_SPLIT, jobs: int = 1,
                      sim_params: dict = None) -> Manifest:
    """Phantom images and labels for n_cases cases; the manifest lists no fields yet"""
    if n_cases < 1:
        raise ValidationError(f"n_cases must be >= 1, got {n_cases}")
    out_dir = FileHelper.ensure_directory_exists(out_dir)
    splits = assign_splits(n_cases, seed, split)
    cases = ParallelHelper.map(_generate_phantom, [(i, seed, grid, splits[i], str(out_dir)) for i in range(n_cases)], jobs)
    manifest = Manifest(seed=seed, grid=grid, sim_params=dict(sim_params or {}),
                        split_fractions=list(split), cases=cases, root=out_dir)
    write_manifest(out_dir / MANIFEST_NAME, manifest)
    logger.info(f"Phantoms written to {out_dir}: {manifest.split_counts()}")
    return manifest


def load_phantom(manifest: Manifest, case: ManifestCase) -> Phantom:
    image = read_volume(manifest.resolve(case.image))
    labels = read_labels(manifest.resolve(case.labels))
    check_same_grid(f"{case.case_id} image", manifest.grid, image.grid)
    return Phantom(image, labels, np.asarray(case.tumor_center), case.tumor_radius,
                   case.edema_thickness, case.seed)


def _simulate_case(job: Tuple[Manifest, ManifestCase, SimParams]) -> ManifestCase:
    manifest, case, params = job
    phantom = load_phantom(manifest, case)
    rng = SeedHelper.case_rng(params.seed, case.index, GRAVITY_STREAM)
    base = np.asarray(case.base_gravity, dtype=np.float64)
    craniotomy = np.asarray(case.craniotomy_point, dtype=np.float64)
    gravities = [perturb_gravity(base, params.max_perturb_deg, rng) for _ in range(params.K)]

    fields = []
    for k, g in enumerate(gravities):
        field = simulate_deformation(phantom, g, params, craniotomy)
        name = f"{case.case_id}/field_{k}.sff"
        write_field(manifest.resolve(name), field)
        fields.append(name)
    logger.debug(f"Simulated {len(fields)} fields for {case.case_id}")
    return replace(case, fields=fields, gravities=[g.tolist() for g in gravities])


def simulate_dataset(manifest: Manifest, params: SimParams, jobs: int = 1) -> Manifest:
    """K perturbed-gravity ground-truth fields per phantom; rewrites the manifest"""
    if not manifest.cases:
        raise ValidationError("manifest lists no cases")
    cases = ParallelHelper.map(_simulate_case, [(manifest, case, params) for case in manifest.cases], jobs)
    simulated = replace(manifest, cases=cases, sim_params=params.to_dict())
    write_manifest(manifest.root / MANIFEST_NAME, simulated)
    logger.info(f"Simulated {params.K} fields for each of {len(cases)} cases")
    return simulated


def generate_dataset(n_cases: int, grid: GridSpec, params: SimParams, out_dir: Union[str, Path],
                     split: Sequence[float] = DEFAULT_SPLIT, jobs: int = 1) -> Manifest:
    """Phantoms, gravity variants and certified ground-truth fields for n_cases cases.

    Every case draws from its own (seed, case) stream, so jobs > 1 writes the
    same bytes as a serial run.
    """
    manifest = generate_phantoms(n_cases, grid, params.seed, out_dir, split, jobs, params.to_dict())
    return simulate_dataset(manifest, params, jobs)


@dataclass(frozen=True, eq=False)
class CaseData:
    case: ManifestCase
    image: Volume
    labels: LabelVolume
    fields: List[DisplacementField]


def load_case(manifest: Manifest, case: ManifestCase) -> CaseData:
    """Read a case's image, labels and ground-truth fields and check they share the manifest grid"""
    if not case.fields:
        raise ValidationError(f"{case.case_id} has no ground-truth fields; run the simulation stage first")
    image = read_volume(manifest.resolve(case.image))
    labels = read_labels(manifest.resolve(case.labels))
    fields = [read_field(manifest.resolve(name)) for name in case.fields]
    for what, grid in [("image", image.grid), ("labels", labels.grid)] + [
            (f"field {name}", f.grid) for name, f in zip(case.fields, fields)]:
        check_same_grid(f"{case.case_id} {what}", manifest.grid, grid)
    return CaseData(case, image, labels, fields)
