"""
Results store for evaluation reports
"""

from .models import Base, CaseReportRecord
from .db import DatabaseManager
from .operations import ReportOperations

__all__ = ['Base', 'CaseReportRecord', 'DatabaseManager', 'ReportOperations']
