import json
from pathlib import Path
from concurrent.futures import ProcessPoolExecutor
from typing import Any, Callable, Dict, List, Sequence, Union

import logging
import numpy as np
import pandas as pd

from utils.errors import ValidationError, FormatError

logger = logging.getLogger(__name__)

class FileHelper:
    """File and directory operations helper"""

    @staticmethod
    def ensure_directory_exists(directory: Union[str, Path]) -> Path:
        """Ensure directory exists, create if not"""
        path = Path(directory)
        if not path.exists():
            try:
                path.mkdir(parents=True, exist_ok=True)
            except OSError as e:
                raise ValidationError(f"cannot create output directory {path}: {e}") from e
            logger.info(f"Created directory: {path}")
        elif not path.is_dir():
            raise ValidationError(f"output path exists and is not a directory: {path}")
        return path

    @staticmethod
    def save_json(data: Dict[Any, Any], filepath: Union[str, Path]) -> Path:
        """Save data to JSON file (sorted keys, stable bytes)"""
        filepath = Path(filepath)
        FileHelper.ensure_directory_exists(filepath.parent)

        with open(filepath, 'w', encoding='utf-8') as f:
            json.dump(data, f, indent=2, sort_keys=True, ensure_ascii=False,
                      default=JSONHelper.default)
            f.write('\n')

        logger.debug(f"Saved JSON data to {filepath}")
        return filepath

    @staticmethod
    def load_json(filepath: Union[str, Path]) -> Dict[Any, Any]:
        """Load data from JSON file"""
        filepath = Path(filepath)
        if not filepath.exists():
            raise ValidationError(f"JSON file not found: {filepath}")
        try:
            with open(filepath, 'r', encoding='utf-8') as f:
                data = json.load(f)
        except json.JSONDecodeError as e:
            raise FormatError("invalid JSON document", path=filepath, byte_offset=e.pos) from e

        logger.debug(f"Loaded JSON data from {filepath}")
        return data

    @staticmethod
    def save_csv(df: pd.DataFrame, filepath: Union[str, Path]) -> Path:
        """Save DataFrame to CSV file"""
        filepath = Path(filepath)
        FileHelper.ensure_directory_exists(filepath.parent)
        df.to_csv(filepath, index=False, encoding='utf-8')
        logger.debug(f"Saved CSV data to {filepath}")
        return filepath

class JSONHelper:
    """numpy-aware JSON conversion"""

    @staticmethod
    def default(obj: Any) -> Any:
        if isinstance(obj, np.ndarray):
            return obj.tolist()
        if isinstance(obj, np.integer):
            return int(obj)
        if isinstance(obj, np.floating):
            return float(obj)
        if isinstance(obj, np.bool_):
            return bool(obj)
        if isinstance(obj, Path):
            return str(obj)
        raise TypeError(f"Object of type {type(obj).__name__} is not JSON serializable")

class SeedHelper:
    """Deterministic random streams"""

    @staticmethod
    def case_rng(seed: int, case_index: int, *stream: int) -> np.random.Generator:
        """Independent generator for one case, identical in serial and parallel runs"""
        return np.random.default_rng(np.random.SeedSequence([int(seed), int(case_index), *map(int, stream)]))

    @staticmethod
    def child_seed(seed: int, *stream: int) -> int:
        """Derive a 32-bit integer seed from a parent seed and stream ids"""
        ss = np.random.SeedSequence([int(seed), *map(int, stream)])
        return int(ss.generate_state(1, dtype=np.uint32)[0])

class ParallelHelper:
    """Process-pool fan-out over independent cases"""

    @staticmethod
    def map(func: Callable, items: Sequence[Any], jobs: int = 1) -> List[Any]:
        """Ordered results; runs serially when jobs <= 1"""
        items = list(items)
        if jobs > 1 and len(items) > 1:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                return list(pool.map(func, items))
        return [func(item) for item in items]
