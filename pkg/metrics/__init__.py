"""
Evaluation metrics, significance testing and report tables
"""

from .field_metrics import mse, max_error, pct_nonpositive_jacobian
from .surface import boundary_voxels, directed_distances, hd95, hausdorff, nearest_rank
from .statistics import WilcoxonResult, wilcoxon_signed_rank, bonferroni
from .report import (
    METRIC_COLUMNS,
    CaseReport,
    evaluate_case,
    reports_to_frame,
    compare_methods,
    aggregate_table,
    format_table,
)

__all__ = [
    'mse',
    'max_error',
    'pct_nonpositive_jacobian',
    'boundary_voxels',
    'directed_distances',
    'hd95',
    'hausdorff',
    'nearest_rank',
    'WilcoxonResult',
    'wilcoxon_signed_rank',
    'bonferroni',
    'METRIC_COLUMNS',
    'CaseReport',
    'evaluate_case',
    'reports_to_frame',
    'compare_methods',
    'aggregate_table',
    'format_table',
]
