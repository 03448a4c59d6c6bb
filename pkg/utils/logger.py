import functools
import json
import logging
import sys
import time
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, Optional

# Attributes every LogRecord carries; anything else came in through extra=
_RECORD_ATTRS = set(vars(logging.makeLogRecord({}))) | {'message', 'asctime', 'taskName'}

PLAIN_FORMAT = '%(asctime)s %(levelname)-8s [%(name)s] %(message)s'
DETAILED_FORMAT = '%(asctime)s %(levelname)-8s [%(name)s] %(funcName)s:%(lineno)d %(message)s'
DATE_FORMAT = '%Y-%m-%d %H:%M:%S'


class CustomFormatter(logging.Formatter):
    """Level names in colour when stderr is a terminal"""

    COLORS = {
        'DEBUG': '\033[36m',
        'INFO': '\033[32m',
        'WARNING': '\033[33m',
        'ERROR': '\033[31m',
        'CRITICAL': '\033[35m',
    }
    RESET = '\033[0m'

    def __init__(self):
        super().__init__(PLAIN_FORMAT, datefmt=DATE_FORMAT)
        self.use_color = sys.stderr.isatty()

    def formatMessage(self, record):
        message = super().formatMessage(record)
        color = self.COLORS.get(record.levelname)
        if self.use_color and color:
            message = message.replace(record.levelname, f"{color}{record.levelname}{self.RESET}", 1)
        return message


class JSONFormatter(logging.Formatter):
    """One JSON object per record, structured fields merged at the top level"""

    def format(self, record):
        entry = {
            'timestamp': datetime.fromtimestamp(record.created, timezone.utc).isoformat(),
            'level': record.levelname,
            'logger': record.name,
            'message': record.getMessage(),
            'location': f"{record.module}.{record.funcName}:{record.lineno}",
        }
        entry.update({k: v for k, v in vars(record).items() if k not in _RECORD_ATTRS})
        if record.exc_info:
            entry['exception'] = self.formatException(record.exc_info)
        return json.dumps(entry, ensure_ascii=False, default=str)


# (file stem, level, formatter factory); dated files are written only when a log directory is set
_FILE_HANDLERS = (
    ('brainshift', logging.DEBUG, lambda: logging.Formatter(DETAILED_FORMAT, datefmt=DATE_FORMAT)),
    ('errors', logging.ERROR, lambda: logging.Formatter(DETAILED_FORMAT, datefmt=DATE_FORMAT)),
    ('structured', logging.INFO, JSONFormatter),
)


class Logger:
    """Named logger with a console handler, optional log files and pipeline helpers"""

    _instances: Dict[str, 'Logger'] = {}

    def __new__(cls, name: str = __name__):
        if name not in cls._instances:
            cls._instances[name] = super().__new__(cls)
        return cls._instances[name]

    def __init__(self, name: str = __name__):
        if getattr(self, '_initialized', False):
            return
        self._initialized = True
        self.name = name
        self.logger = logging.getLogger(name)
        self.logger.setLevel(logging.DEBUG)
        self.logger.propagate = False
        if not self.logger.handlers:
            self._setup_handlers()

    def _setup_handlers(self):
        from config.config import Config

        settings = Config.LOGGING_CONFIG
        console = logging.StreamHandler(sys.stderr)
        console.setLevel(getattr(logging, settings['LOG_LEVEL'].upper(), logging.INFO))
        console.setFormatter(JSONFormatter() if settings['JSON_LOGS'] else CustomFormatter())
        self.logger.addHandler(console)

        if settings['LOG_DIR']:
            log_dir = Path(settings['LOG_DIR'])
            log_dir.mkdir(parents=True, exist_ok=True)
            stamp = datetime.now().strftime('%Y%m%d')
            for stem, level, make_formatter in _FILE_HANDLERS:
                suffix = 'jsonl' if stem == 'structured' else 'log'
                handler = logging.FileHandler(log_dir / f"{stem}_{stamp}.{suffix}", encoding='utf-8')
                handler.setLevel(level)
                handler.setFormatter(make_formatter())
                self.logger.addHandler(handler)

    def _emit(self, level: int, message: str, exc_info: bool = False, **fields):
        self.logger.log(level, message, extra=fields, exc_info=exc_info, stacklevel=3)

    def debug(self, message: str, **fields):
        self._emit(logging.DEBUG, message, **fields)

    def info(self, message: str, **fields):
        self._emit(logging.INFO, message, **fields)

    def warning(self, message: str, **fields):
        self._emit(logging.WARNING, message, **fields)

    def error(self, message: str, **fields):
        self._emit(logging.ERROR, message, exc_info=True, **fields)

    def critical(self, message: str, **fields):
        self._emit(logging.CRITICAL, message, exc_info=True, **fields)

    def log_stage(self, stage: str, cases: int, duration: float, **fields):
        self.info(f"{stage}: {cases} case(s) in {duration:.2f}s",
                  stage=stage, cases=cases, duration_seconds=duration, activity_type="pipeline", **fields)

    def log_training_epoch(self, epoch: int, train_loss: float, val_loss: Optional[float], duration: float):
        val = f", val {val_loss:.6g}" if val_loss is not None else ""
        self.info(f"epoch {epoch}: train {train_loss:.6g}{val} ({duration:.1f}s)",
                  epoch=epoch, train_loss=train_loss, val_loss=val_loss,
                  duration_seconds=duration, activity_type="training")

    def log_case_report(self, case_id: str, method: str, metrics: Dict[str, Any]):
        self.debug(f"{case_id} [{method}] evaluated", case_id=case_id, method=method,
                   activity_type="evaluation", **{f"metric_{k}": v for k, v in metrics.items()})

    def log_database_operation(self, operation: str, table: str, records_affected: int):
        self.info(f"{operation}: {records_affected} row(s) in {table}",
                  operation=operation, table=table, records_affected=records_affected,
                  activity_type="database")


def get_logger(name: str = __name__) -> Logger:
    return Logger(name)


class StageTimer:
    """Wall time of a block; reported through ``log_stage`` when a logger is given"""

    def __init__(self, stage: str, logger: Optional[Logger] = None, cases: int = 0):
        self.stage = stage
        self.logger = logger
        self.cases = cases
        self.duration = 0.0
        self._start = 0.0

    def __enter__(self):
        self._start = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        self.duration = time.perf_counter() - self._start
        if self.logger is not None and exc_type is None:
            self.logger.log_stage(self.stage, self.cases, self.duration)
        return False


def log_performance(logger_name: str = __name__):
    """Decorator recording duration and outcome of each call"""
    def decorator(func):
        @functools.wraps(func)
        def wrapper(*args, **kwargs):
            logger = get_logger(logger_name)
            start = time.perf_counter()
            try:
                result = func(*args, **kwargs)
            except Exception as e:
                logger.warning(f"{func.__name__} failed after {time.perf_counter() - start:.2f}s",
                               function=func.__name__, duration_seconds=time.perf_counter() - start,
                               error=str(e), success=False, activity_type="performance")
                raise
            logger.debug(f"{func.__name__} finished in {time.perf_counter() - start:.2f}s",
                         function=func.__name__, duration_seconds=time.perf_counter() - start,
                         success=True, activity_type="performance")
            return result
        return wrapper
    return decorator
