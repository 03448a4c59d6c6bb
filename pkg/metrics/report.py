"""
Per-case evaluation reports and the method comparison table
"""
from dataclasses import dataclass, field
import logging
import math
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from fields.grid import EDEMA, DisplacementField, LabelVolume, check_same_grid
from fields.sampling import warp_binary
from metrics.field_metrics import max_error, mse, pct_nonpositive_jacobian
from metrics.statistics import bonferroni, wilcoxon_signed_rank
from metrics.surface import hd95
from utils.errors import InsufficientDataError, ValidationError

logger = logging.getLogger(__name__)

METRIC_COLUMNS = ('mse_brain', 'mse_edema', 'max_error', 'hd95', 'pct_nonpos_jacobian')
COLUMN_TITLES = {
    'mse_brain': 'MSE brain (mm2)',
    'mse_edema': 'MSE edema (mm2)',
    'max_error': 'Max Error (mm)',
    'hd95': 'HD95 (mm)',
    'pct_nonpos_jacobian': '%|J|<=0',
    'time': 'Time (s)',
}


@dataclass
class CaseReport:
    case_id: str
    method: str
    mse_brain: float
    mse_edema: float
    max_error: float
    hd95: float
    pct_nonpos_jacobian: float
    m_keypoints: Optional[int] = None
    elapsed: Dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        for name in METRIC_COLUMNS:
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0:
                raise ValidationError(f"{name} must be finite and non-negative, got {value}")
        for stage, seconds in self.elapsed.items():
            if not math.isfinite(seconds) or seconds < 0:
                raise ValidationError(f"elapsed[{stage}] must be finite and non-negative, got {seconds}")

    @property
    def total_time(self) -> float:
        return float(sum(self.elapsed.values()))

    def to_dict(self, include_timings: bool = True) -> Dict[str, Any]:
        data = {
            'case_id': self.case_id,
            'method': self.method,
            'm_keypoints': self.m_keypoints,
        }
        data.update({name: getattr(self, name) for name in METRIC_COLUMNS})
        if include_timings:
            data['elapsed'] = dict(self.elapsed)
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'CaseReport':
        return cls(
            case_id=data['case_id'],
            method=data['method'],
            m_keypoints=data.get('m_keypoints'),
            elapsed={k: float(v) for k, v in data.get('elapsed', {}).items()},
            **{name: float(data[name]) for name in METRIC_COLUMNS},
        )


def evaluate_case(phi_pred: DisplacementField, phi_gt: DisplacementField, labels: LabelVolume,
                  timings: Optional[Dict[str, float]] = None, case_id: str = "", method: str = "",
                  strict_jacobian: bool = False, percentile: float = 95.0,
                  m_keypoints: Optional[int] = None) -> CaseReport:
    check_same_grid("predicted field", phi_gt.grid, phi_pred.grid)
    check_same_grid("labels", phi_gt.grid, labels.grid)
    brain = labels.brain_mask()
    edema = labels.mask((EDEMA,))

    warped_pred = warp_binary(brain, phi_pred)
    warped_gt = warp_binary(brain, phi_gt)

    report = CaseReport(
        case_id=case_id,
        method=method,
        mse_brain=mse(phi_pred, phi_gt, brain),
        mse_edema=mse(phi_pred, phi_gt, edema),
        max_error=max_error(phi_pred, phi_gt, brain),
        hd95=hd95(warped_pred, warped_gt, phi_gt.grid.spacing, percentile),
        pct_nonpos_jacobian=pct_nonpositive_jacobian(phi_pred, brain, strict=strict_jacobian),
        m_keypoints=m_keypoints,
        elapsed=dict(timings or {}),
    )
    logger.debug(f"Evaluated {case_id} [{method}]: mse_brain={report.mse_brain:.4f}")
    return report


def reports_to_frame(reports: Iterable[CaseReport]) -> pd.DataFrame:
    rows = []
    for report in reports:
        row = report.to_dict(include_timings=False)
        row['time'] = report.total_time
        rows.append(row)
    columns = ['case_id', 'method', 'm_keypoints', *METRIC_COLUMNS, 'time']
    return pd.DataFrame(rows, columns=columns)


def compare_methods(reports: Sequence[CaseReport], pairs: Sequence[Tuple[str, str]],
                    metrics: Sequence[str] = METRIC_COLUMNS) -> List[Dict[str, Any]]:
    """Paired signed-rank test per (method, baseline, metric), Bonferroni-corrected over the family"""
    frame = reports_to_frame(reports)
    comparisons = []
    for method, baseline in pairs:
        left = frame[frame['method'] == method].set_index('case_id')
        right = frame[frame['method'] == baseline].set_index('case_id')
        shared = sorted(set(left.index) & set(right.index))
        for metric in metrics:
            entry = {'method': method, 'baseline': baseline, 'metric': metric, 'n_cases': len(shared)}
            try:
                result = wilcoxon_signed_rank(left.loc[shared, metric].to_numpy(),
                                              right.loc[shared, metric].to_numpy())
                entry.update(result.to_dict())
            except InsufficientDataError as e:
                entry['error'] = str(e)
            comparisons.append(entry)

    tested = [c for c in comparisons if 'p_value' in c]
    if tested:
        corrected = bonferroni([c['p_value'] for c in tested], family_size=len(comparisons))
        for entry, p in zip(tested, corrected):
            entry['p_corrected'] = float(p)
    return comparisons


def aggregate_table(reports: Sequence[CaseReport], comparisons: Optional[List[Dict[str, Any]]] = None,
                    significance: float = 0.01, include_time: bool = True) -> pd.DataFrame:
    """One row per method with 'mean (std)' cells; '*' marks a significant paired comparison"""
    frame = reports_to_frame(reports)
    columns = list(METRIC_COLUMNS) + (['time'] if include_time else [])
    significant = {(c['method'], c['metric']) for c in comparisons or []
                   if c.get('p_corrected') is not None and c['p_corrected'] < significance}

    rows = {}
    for method, group in frame.groupby('method', sort=False):
        row = {}
        for column in columns:
            values = group[column].to_numpy(dtype=np.float64)
            std = float(np.std(values, ddof=1)) if len(values) > 1 else 0.0
            cell = f"{np.mean(values):.4f} ({std:.4f})"
            if (method, column) in significant:
                cell += "*"
            row[COLUMN_TITLES[column]] = cell
        rows[method] = row
    table = pd.DataFrame.from_dict(rows, orient='index')
    table.index.name = 'method'
    return table


def format_table(table: pd.DataFrame) -> str:
    return table.to_string()
