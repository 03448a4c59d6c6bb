from datetime import datetime, timezone

from sqlalchemy import Column, DateTime, Float, Integer, String
from sqlalchemy.orm import declarative_base

Base = declarative_base()


def _utcnow():
    return datetime.now(timezone.utc)


class CaseReportRecord(Base):
    __tablename__ = 'case_reports'

    id = Column(Integer, primary_key=True, autoincrement=True)
    run_id = Column(String(64), nullable=False, index=True)
    method = Column(String(64), nullable=False, index=True)  # linear / tps / refined:<name>
    split = Column(String(10), nullable=False)
    case_id = Column(String(32), nullable=False)
    m_keypoints = Column(Integer)
    mse_brain = Column(Float, nullable=False)
    mse_edema = Column(Float, nullable=False)
    max_error = Column(Float, nullable=False)
    hd95 = Column(Float, nullable=False)
    pct_nonpos_jacobian = Column(Float, nullable=False)
    elapsed = Column(Float)
    timestamp = Column(DateTime, default=_utcnow)

    def __repr__(self):
        return f"<CaseReportRecord(case_id='{self.case_id}', method='{self.method}', mse_brain={self.mse_brain})>"
