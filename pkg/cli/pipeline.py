"""
Stage implementations behind the command line.

Every stage reads the resolved pipeline configuration and a manifest, and
writes its artifacts (plus the resolved configuration) into an output
directory that the downstream stages accept as input.
"""
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from database.operations import ReportOperations
from fields.grid import GridSpec
from formats.documents import Manifest, ManifestCase, read_keypoint_metadata, read_keypoints, read_manifest, write_keypoints
from formats.volume_io import read_field, read_volume, write_field, write_pgm
from interpolators.base_interpolator import get_interpolator
from keypoints.detector import detect_keypoints
from keypoints.keypoint_set import KeypointSet
from keypoints.sampling import draw_keypoints
from metrics.report import CaseReport, aggregate_table, compare_methods, evaluate_case, format_table, reports_to_frame
from refiner.model import RefinerConfig, RefinerModel
from refiner.trainer import RefinerTrainer
from simulation.dataset import CaseData, generate_phantoms, load_case, simulate_dataset
from simulation.deformation import SimParams
from utils.errors import ValidationError
from utils.helpers import FileHelper, ParallelHelper, SeedHelper
from utils.logger import StageTimer, get_logger, log_performance

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

RESOLVED_CONFIG_NAME = "config.resolved.json"
FIELDS_DOCUMENT = "fields.json"
EVAL_DOCUMENT = "eval.json"
TIMINGS_DOCUMENT = "timings.json"
SWEEP_DOCUMENT = "sweep.json"
CHECKPOINT_NAME = "refiner.sfc"
HISTORY_DOCUMENT = "history.json"

# stream id for evaluation draws (variant + keypoints) per case
EVALUATION_STREAM = 20


def write_resolved_config(cfg: Dict[str, Any], out_dir: PathLike) -> Path:
    return FileHelper.save_json(cfg, Path(out_dir) / RESOLVED_CONFIG_NAME)


def dump_slices(out_dir: PathLike, name: str, volume: np.ndarray) -> List[Path]:
    """Mid-slice PGMs along each axis of a scalar volume"""
    slices_dir = FileHelper.ensure_directory_exists(Path(out_dir) / "slices")
    paths = []
    for axis in range(3):
        middle = np.take(volume, volume.shape[axis] // 2, axis=axis)
        paths.append(write_pgm(slices_dir / f"{name}_axis{axis}.pgm", middle))
    return paths


def _grid_from_config(cfg: Dict[str, Any]) -> GridSpec:
    return GridSpec.from_dict(cfg['grid'])


def _select_cases(manifest: Manifest, split: str) -> List[ManifestCase]:
    cases = manifest.cases_in(split)
    if not cases:
        raise ValidationError(f"manifest has no cases in split '{split}'")
    return cases


# --- dataset -----------------------------------------------------------------

@log_performance(__name__)
def run_phantom(cfg: Dict[str, Any], out_dir: PathLike, n_cases: Optional[int] = None) -> Manifest:
    n_cases = cfg['dataset']['n_cases'] if n_cases is None else n_cases
    sim_params = SimParams.from_config(cfg['simulation'], cfg['seed'])
    manifest = generate_phantoms(n_cases, _grid_from_config(cfg), cfg['seed'], out_dir,
                                 cfg['dataset']['split'], cfg['jobs'], sim_params.to_dict())
    write_resolved_config(cfg, out_dir)
    if cfg['dump_slices']:
        first = manifest.cases[0]
        dump_slices(out_dir, f"{first.case_id}_image", read_volume(manifest.resolve(first.image)).data)
    return manifest


@log_performance(__name__)
def run_simulate(cfg: Dict[str, Any], manifest_path: PathLike) -> Manifest:
    manifest = read_manifest(manifest_path)
    params = SimParams.from_config(cfg['simulation'], manifest.seed)
    simulated = simulate_dataset(manifest, params, cfg['jobs'])
    write_resolved_config(cfg, simulated.root)
    if cfg['dump_slices']:
        first = simulated.cases[0]
        field = read_field(simulated.resolve(first.fields[0]))
        dump_slices(simulated.root, f"{first.case_id}_field0_magnitude", field.magnitude())
    return simulated


# --- keypoints and interpolation ---------------------------------------------

def evaluation_keypoints(cfg: Dict[str, Any], case: CaseData, m: int,
                         candidates: Optional[np.ndarray] = None) -> Tuple[KeypointSet, int]:
    """Seeded ground-truth variant and keypoint draw for one evaluation case"""
    rng = SeedHelper.case_rng(cfg['seed'], case.case.index, EVALUATION_STREAM)
    variant = int(rng.integers(len(case.fields)))
    if candidates is None:
        candidates = detect_keypoints(case.image, case.labels.brain_mask(),
                                      cfg['keypoints']['contrast_fraction'] * case.image.intensity_range)
    return draw_keypoints(candidates, case.fields[variant], m, rng), variant


@log_performance(__name__)
def run_keypoints(cfg: Dict[str, Any], manifest_path: PathLike, out_dir: PathLike,
                  split: Optional[str] = None) -> List[Path]:
    manifest = read_manifest(manifest_path)
    split = split or cfg['evaluation']['split']
    out_dir = FileHelper.ensure_directory_exists(out_dir)
    m = cfg['keypoints']['m_keypoints']
    paths = []
    for case in _select_cases(manifest, split):
        data = load_case(manifest, case)
        keypoints, variant = evaluation_keypoints(cfg, data, m)
        metadata = {'case_id': case.case_id, 'variant': variant, 'm_keypoints': keypoints.m,
                    'seed': cfg['seed'], 'split': case.split}
        paths.append(write_keypoints(out_dir / f"{case.case_id}.json", keypoints, metadata))
    write_resolved_config(cfg, out_dir)
    logger.info(f"Wrote keypoints for {len(paths)} cases to {out_dir}")
    return paths


def _interpolate_case(job: Tuple[Dict[str, Any], str, str, str, Optional[str]]) -> Dict[str, Any]:
    cfg, manifest_path, case_id, out_dir, keypoints_dir = job
    manifest = read_manifest(manifest_path)
    case = next(c for c in manifest.cases if c.case_id == case_id)
    data = load_case(manifest, case)
    m = cfg['keypoints']['m_keypoints']
    if keypoints_dir:
        path = Path(keypoints_dir) / f"{case_id}.json"
        keypoints = read_keypoints(path)
        variant = int(read_keypoint_metadata(path)['variant'])
    else:
        keypoints, variant = evaluation_keypoints(cfg, data, m)

    interp = cfg['interpolation']
    interpolator = get_interpolator(interp['method'], interp['lambda_tps'])
    with StageTimer('interpolation') as timer:
        field = interpolator.interpolate(keypoints, data.labels, interp['zero_codes'])
    write_field(Path(out_dir) / f"{case_id}.sff", field)
    return {'case_id': case_id, 'variant': variant, 'm_keypoints': keypoints.m,
            'timings': {'interpolation': timer.duration}}


def _write_fields_document(out_dir: Path, method: str, entries: List[Dict[str, Any]],
                           extra: Optional[Dict[str, Any]] = None) -> Path:
    document = {
        'method': method,
        'cases': {e['case_id']: {'variant': e['variant'], 'm_keypoints': e['m_keypoints'],
                                 **({'padding': e['padding']} if 'padding' in e else {})}
                  for e in entries},
    }
    document.update(extra or {})
    FileHelper.save_json({e['case_id']: e['timings'] for e in entries}, out_dir / TIMINGS_DOCUMENT)
    return FileHelper.save_json(document, out_dir / FIELDS_DOCUMENT)


@log_performance(__name__)
def run_interpolate(cfg: Dict[str, Any], manifest_path: PathLike, out_dir: PathLike,
                    keypoints_dir: Optional[PathLike] = None, split: Optional[str] = None) -> Path:
    manifest = read_manifest(manifest_path)
    split = split or cfg['evaluation']['split']
    out_dir = FileHelper.ensure_directory_exists(out_dir)
    cases = _select_cases(manifest, split)
    jobs = [(cfg, str(manifest_path), c.case_id, str(out_dir), str(keypoints_dir) if keypoints_dir else None)
            for c in cases]
    with StageTimer('interpolate', get_logger(__name__), cases=len(cases)):
        entries = ParallelHelper.map(_interpolate_case, jobs, cfg['jobs'])
    write_resolved_config(cfg, out_dir)
    if cfg['dump_slices']:
        dump_slices(out_dir, f"{cases[0].case_id}_magnitude",
                    read_field(out_dir / f"{cases[0].case_id}.sff").magnitude())
    return _write_fields_document(out_dir, cfg['interpolation']['method'], entries,
                                  {'lambda_tps': cfg['interpolation']['lambda_tps']})


# --- refiner ------------------------------------------------------------------

@log_performance(__name__)
def run_train(cfg: Dict[str, Any], manifest_path: PathLike, out_dir: PathLike) -> Tuple[Path, Dict[str, Any]]:
    manifest = read_manifest(manifest_path)
    out_dir = FileHelper.ensure_directory_exists(out_dir)
    model = RefinerModel(RefinerConfig.from_dict(cfg['refiner'], seed=cfg['seed']))
    trainer = RefinerTrainer(model, method=cfg['interpolation']['method'],
                             lambda_tps=cfg['interpolation']['lambda_tps'],
                             m_keypoints=cfg['keypoints']['m_keypoints'],
                             zero_codes=cfg['interpolation']['zero_codes'],
                             contrast_fraction=cfg['keypoints']['contrast_fraction'])
    console = get_logger(__name__)
    with StageTimer('train', console, cases=len(manifest.cases_in('train'))):
        model, history = trainer.train(manifest, on_epoch=console.log_training_epoch)

    path = model.save(out_dir / CHECKPOINT_NAME, extra={'init_method': cfg['interpolation']['method']})
    history_document = history.to_dict()
    FileHelper.save_json(history_document, out_dir / HISTORY_DOCUMENT)
    write_resolved_config(cfg, out_dir)
    return path, history_document


def _refine_case(job: Tuple[str, str, str, Dict[str, Any], str, str]) -> Dict[str, Any]:
    checkpoint, manifest_path, case_id, entry, fields_dir, out_dir = job
    manifest = read_manifest(manifest_path)
    case = next(c for c in manifest.cases if c.case_id == case_id)
    data = load_case(manifest, case)
    model = RefinerModel.load(checkpoint)
    phi_init = read_field(Path(fields_dir) / f"{case_id}.sff")
    with StageTimer('refinement') as timer:
        refined, pad = model.refine(data.image, phi_init, data.labels)
    write_field(Path(out_dir) / f"{case_id}.sff", refined)
    return {'case_id': case_id, 'variant': entry['variant'], 'm_keypoints': entry['m_keypoints'],
            'padding': list(pad), 'timings': {'refinement': timer.duration}}


@log_performance(__name__)
def run_refine(cfg: Dict[str, Any], manifest_path: PathLike, checkpoint: PathLike,
               fields_dir: PathLike, out_dir: PathLike) -> Path:
    fields_dir = Path(fields_dir)
    source = FileHelper.load_json(fields_dir / FIELDS_DOCUMENT)
    source_timings = FileHelper.load_json(fields_dir / TIMINGS_DOCUMENT)
    out_dir = FileHelper.ensure_directory_exists(out_dir)
    jobs = [(str(checkpoint), str(manifest_path), case_id, entry, str(fields_dir), str(out_dir))
            for case_id, entry in sorted(source['cases'].items())]
    with StageTimer('refine', get_logger(__name__), cases=len(jobs)):
        entries = ParallelHelper.map(_refine_case, jobs, cfg['jobs'])
    for entry in entries:
        entry['timings'] = {**source_timings.get(entry['case_id'], {}), **entry['timings']}
    write_resolved_config(cfg, out_dir)
    return _write_fields_document(out_dir, f"refined_{source['method']}", entries,
                                  {'checkpoint': str(checkpoint), 'init_method': source['method']})


# --- evaluation ---------------------------------------------------------------

def _evaluate_method_case(job: Tuple[Dict[str, Any], str, str, str, str, Dict[str, Any], Dict[str, float]]) -> Dict[str, Any]:
    cfg, manifest_path, case_id, method, fields_dir, entry, timings = job
    manifest = read_manifest(manifest_path)
    case = next(c for c in manifest.cases if c.case_id == case_id)
    data = load_case(manifest, case)
    phi_pred = read_field(Path(fields_dir) / f"{case_id}.sff")
    report = evaluate_case(phi_pred, data.fields[entry['variant']], data.labels, timings,
                           case_id=case_id, method=method,
                           strict_jacobian=cfg['evaluation']['strict_jacobian'],
                           percentile=cfg['evaluation']['percentile'],
                           m_keypoints=entry['m_keypoints'])
    return report.to_dict()


def store_reports(reports: Sequence[CaseReport], db_url: Optional[str], run_id: str, split: str) -> bool:
    operations = ReportOperations(db_url)
    stored = operations.insert_case_reports(reports, run_id, split)
    if stored:
        get_logger(__name__).log_database_operation("insert_case_reports", "case_reports", len(reports))
    return stored


def evaluation_document(reports: List[CaseReport], comparisons: Sequence[Tuple[str, str]],
                        significance: float) -> Dict[str, Any]:
    """Deterministic summary: per-case metrics, Wilcoxon comparisons and the mean (std) table"""
    tests = compare_methods(reports, comparisons) if comparisons else []
    table = aggregate_table(reports, tests, significance, include_time=False)
    return {
        'reports': [r.to_dict(include_timings=False) for r in reports],
        'comparisons': tests,
        'table': table.to_dict(orient='index'),
    }


@log_performance(__name__)
def run_eval(cfg: Dict[str, Any], manifest_path: PathLike, field_dirs: Dict[str, PathLike],
             out_dir: PathLike, comparisons: Sequence[Tuple[str, str]] = (),
             db_url: Optional[str] = None) -> Tuple[Dict[str, Any], str]:
    if not field_dirs:
        raise ValidationError("eval needs at least one --fields METHOD=DIR")
    for method, baseline in comparisons:
        for name in (method, baseline):
            if name not in field_dirs:
                raise ValidationError(f"comparison names unknown method '{name}'")
    out_dir = FileHelper.ensure_directory_exists(out_dir)

    jobs = []
    for method, directory in field_dirs.items():
        directory = Path(directory)
        document = FileHelper.load_json(directory / FIELDS_DOCUMENT)
        timing_path = directory / TIMINGS_DOCUMENT
        timings = FileHelper.load_json(timing_path) if timing_path.exists() else {}
        for case_id, entry in sorted(document['cases'].items()):
            jobs.append((cfg, str(manifest_path), case_id, method, str(directory), entry, timings.get(case_id, {})))

    with StageTimer('eval', get_logger(__name__), cases=len(jobs)):
        reports = [CaseReport.from_dict(d) for d in ParallelHelper.map(_evaluate_method_case, jobs, cfg['jobs'])]
    console = get_logger(__name__)
    for report in reports:
        console.log_case_report(report.case_id, report.method, report.to_dict(include_timings=False))

    document = evaluation_document(reports, comparisons, cfg['evaluation']['significance'])
    FileHelper.save_json(document, out_dir / EVAL_DOCUMENT)
    FileHelper.save_json({f"{r.method}/{r.case_id}": r.elapsed for r in reports}, out_dir / TIMINGS_DOCUMENT)
    FileHelper.save_csv(reports_to_frame(reports), out_dir / "reports.csv")
    write_resolved_config(cfg, out_dir)

    if db_url or cfg['evaluation']['store_results']:
        store_reports(reports, db_url, run_id=out_dir.name, split=cfg['evaluation']['split'])

    tests = document['comparisons']
    text = format_table(aggregate_table(reports, tests, cfg['evaluation']['significance']))
    (out_dir / "table.txt").write_text(text + "\n", encoding='utf-8')
    return document, text


# --- keypoint-count sweep -------------------------------------------------------

def _sweep_case(job: Tuple[Dict[str, Any], str, str, Dict[str, str]]) -> List[Dict[str, Any]]:
    cfg, manifest_path, case_id, checkpoints = job
    manifest = read_manifest(manifest_path)
    case = next(c for c in manifest.cases if c.case_id == case_id)
    data = load_case(manifest, case)
    interp = cfg['interpolation']
    evaluation = cfg['evaluation']
    models = {method: RefinerModel.load(path) for method, path in checkpoints.items()}
    candidates = detect_keypoints(data.image, data.labels.brain_mask(),
                                  cfg['keypoints']['contrast_fraction'] * data.image.intensity_range)

    rows = []
    for m in cfg['keypoints']['sweep_m']:
        keypoints, variant = evaluation_keypoints(cfg, data, m, candidates)
        phi_gt = data.fields[variant]
        for method in ('linear', 'tps'):
            with StageTimer('interpolation') as interp_timer:
                phi_init = get_interpolator(method, interp['lambda_tps']).interpolate(
                    keypoints, data.labels, interp['zero_codes'])
            results = [(method, phi_init, {'interpolation': interp_timer.duration})]
            if method in models:
                with StageTimer('refinement') as refine_timer:
                    refined, _ = models[method].refine(data.image, phi_init, data.labels)
                results.append((f"refined_{method}", refined,
                                {'interpolation': interp_timer.duration, 'refinement': refine_timer.duration}))
            for name, field, timings in results:
                report = evaluate_case(field, phi_gt, data.labels, timings, case_id=case_id, method=name,
                                       strict_jacobian=evaluation['strict_jacobian'],
                                       percentile=evaluation['percentile'], m_keypoints=m)
                rows.append(report.to_dict())
    return rows


@log_performance(__name__)
def run_sweep(cfg: Dict[str, Any], manifest_path: PathLike, out_dir: PathLike,
              checkpoints: Optional[Dict[str, PathLike]] = None,
              db_url: Optional[str] = None) -> Tuple[Dict[str, Any], str]:
    """Baseline (and refined) test-set metrics for every M in keypoints.sweep_m"""
    manifest = read_manifest(manifest_path)
    cases = _select_cases(manifest, cfg['evaluation']['split'])
    out_dir = FileHelper.ensure_directory_exists(out_dir)
    checkpoints = {k: str(v) for k, v in (checkpoints or {}).items()}
    for method in checkpoints:
        if method not in ('linear', 'tps'):
            raise ValidationError(f"checkpoint init method must be 'linear' or 'tps', got '{method}'")

    jobs = [(cfg, str(manifest_path), c.case_id, checkpoints) for c in cases]
    with StageTimer('sweep-m', get_logger(__name__), cases=len(jobs)):
        rows = [row for case_rows in ParallelHelper.map(_sweep_case, jobs, cfg['jobs']) for row in case_rows]
    reports = [CaseReport.from_dict(r) for r in rows]

    frame = reports_to_frame(reports)
    trend = frame.pivot_table(index='m_keypoints', columns='method', values='mse_brain', aggfunc='mean')
    per_m = {}
    for m in cfg['keypoints']['sweep_m']:
        subset = [r for r in reports if r.m_keypoints == m]
        pairs = [(f"refined_{method}", method) for method in checkpoints]
        per_m[str(m)] = evaluation_document(subset, pairs, cfg['evaluation']['significance'])

    document = {
        'sweep_m': list(cfg['keypoints']['sweep_m']),
        'mean_mse_brain': {str(m): {method: float(v) for method, v in row.items()}
                           for m, row in trend.iterrows()},
        'per_m': per_m,
    }
    FileHelper.save_json(document, out_dir / SWEEP_DOCUMENT)
    FileHelper.save_json({f"{r.method}/{r.case_id}/M{r.m_keypoints}": r.elapsed for r in reports},
                         out_dir / TIMINGS_DOCUMENT)
    write_resolved_config(cfg, out_dir)

    if db_url or cfg['evaluation']['store_results']:
        store_reports(reports, db_url, run_id=out_dir.name, split=cfg['evaluation']['split'])

    text = trend.to_string(float_format=lambda v: f"{v:.4f}")
    (out_dir / "trend.txt").write_text(text + "\n", encoding='utf-8')
    return document, text
