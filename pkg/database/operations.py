import logging
from typing import Any, Dict, Iterable, List, Optional

from sqlalchemy import func
from sqlalchemy.exc import SQLAlchemyError

from database.db import DatabaseManager
from database.models import CaseReportRecord
from metrics.report import METRIC_COLUMNS, CaseReport

logger = logging.getLogger(__name__)

_RECORD_FIELDS = ('id', 'run_id', 'method', 'split', 'case_id', 'm_keypoints', 'elapsed', 'timestamp')


def _as_row(record: CaseReportRecord) -> Dict[str, Any]:
    return {name: getattr(record, name) for name in _RECORD_FIELDS + tuple(METRIC_COLUMNS)}


class ReportOperations:
    """Stores and queries per-case evaluation reports"""

    def __init__(self, database_url: Optional[str] = None):
        self.db_manager = DatabaseManager(database_url)

    def insert_case_reports(self, reports: Iterable[CaseReport], run_id: str, split: str) -> bool:
        """Insert a batch of case reports in one transaction; False if nothing was stored"""
        records = [
            CaseReportRecord(run_id=run_id, split=split, case_id=report.case_id, method=report.method,
                             m_keypoints=report.m_keypoints, elapsed=report.total_time,
                             **{name: getattr(report, name) for name in METRIC_COLUMNS})
            for report in reports
        ]
        try:
            with self.db_manager.session_scope() as session:
                session.add_all(records)
        except SQLAlchemyError as e:
            logger.error(f"Storing {len(records)} reports for run {run_id} failed: {e}")
            return False
        logger.info(f"Stored {len(records)} case reports for run {run_id} ({split})")
        return True

    def get_reports_by_method(self, method: str, run_id: Optional[str] = None) -> List[Dict[str, Any]]:
        try:
            with self.db_manager.session_scope() as session:
                query = session.query(CaseReportRecord).filter(CaseReportRecord.method == method)
                if run_id is not None:
                    query = query.filter(CaseReportRecord.run_id == run_id)
                return [_as_row(record) for record in query.order_by(CaseReportRecord.id)]
        except SQLAlchemyError as e:
            logger.error(f"Fetching reports of {method} failed: {e}")
            return []

    def get_method_summary(self, method: str, run_id: Optional[str] = None) -> Dict[str, Any]:
        """Case count and per-metric means of one method (means are None when no case is stored)"""
        averages = [func.avg(getattr(CaseReportRecord, name)).label(name) for name in METRIC_COLUMNS]
        try:
            with self.db_manager.session_scope() as session:
                query = session.query(func.count(CaseReportRecord.id).label('n_cases'), *averages)
                query = query.filter(CaseReportRecord.method == method)
                if run_id is not None:
                    query = query.filter(CaseReportRecord.run_id == run_id)
                row = query.one()
        except SQLAlchemyError as e:
            logger.error(f"Summarising {method} failed: {e}")
            return {}
        summary = {'method': method, 'n_cases': int(row.n_cases)}
        summary.update({name: getattr(row, name) for name in METRIC_COLUMNS})
        return summary
