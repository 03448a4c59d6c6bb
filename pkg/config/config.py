# config/config.py
import copy
import json
import os
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

from dotenv import load_dotenv

from utils.errors import ConfigError

load_dotenv()


class Config:
    # Results store
    DATABASE_URL = os.getenv('BRAINSHIFT_DATABASE_URL', 'sqlite:///brainshift_results.db')

    DEFAULT_SEED = int(os.getenv('BRAINSHIFT_SEED', '0'))
    DEFAULT_JOBS = int(os.getenv('BRAINSHIFT_JOBS', '1'))
    TORCH_THREADS = int(os.getenv('BRAINSHIFT_TORCH_THREADS', '0'))  # 0 = torch default

    # Desk-scale acquisition grid (~168 mm field of view)
    GRID_CONFIG = {
        'dims': [48, 48, 48],
        'spacing': [3.5, 3.5, 3.5],
        'origin': [0.0, 0.0, 0.0],
    }

    DATASET_CONFIG = {
        'n_cases': 50,
        'split': [0.75, 0.10, 0.15],
    }

    # Analytic gravity-sag + cavity-collapse surrogate
    SIMULATION_CONFIG = {
        'sag_magnitude': 6.0,
        'sag_falloff': 60.0,
        'cavity_collapse': 0.3,
        'K': 2,
        'max_perturb_deg': 10.0,
        'ramp_voxels': 3,
    }

    KEYPOINT_CONFIG = {
        'm_keypoints': 20,
        'contrast_fraction': 0.02,
        'sweep_m': [5, 10, 15, 20, 50],
    }

    INTERPOLATION_CONFIG = {
        'method': 'tps',
        'lambda_tps': 0.1,
        'zero_codes': [0, 1],
    }

    REFINER_CONFIG = {
        'levels': 3,
        'base_channels': 8,
        'max_channels': 32,
        'leaky_slope': 1e-2,
        'use_scse': True,
        'scse_reduction': 2,
        'residual': True,
        'norm': 'instance',
        'norm_eps': 1e-5,
        'lambda_reg': 50.0,
        'lr': 5e-4,
        'betas': [0.9, 0.999],
        'adam_eps': 1e-8,
        'epochs': 20,
        'batch_size': 1,
        'dtype': 'float64',
        'normalization': 'mask',
        'randomize_m': False,
        'm_range': [5, 50],
        'augment': True,
        'augment_probability': 0.5,
    }

    EVALUATION_CONFIG = {
        'split': 'test',
        'strict_jacobian': False,
        'percentile': 95.0,
        'significance': 0.01,
        'store_results': False,
    }

    LOGGING_CONFIG = {
        'LOG_LEVEL': os.getenv('LOG_LEVEL', 'INFO'),
        'LOG_DIR': os.getenv('BRAINSHIFT_LOG_DIR', ''),
        'JSON_LOGS': os.getenv('BRAINSHIFT_JSON_LOGS', '0') == '1',
    }

    # key -> (type or tuple of types) for every leaf of the pipeline config
    SCHEMA = {
        'seed': int,
        'jobs': int,
        'dump_slices': bool,
        'grid': {'dims': list, 'spacing': list, 'origin': list},
        'dataset': {'n_cases': int, 'split': list},
        'simulation': {'sag_magnitude': (int, float), 'sag_falloff': (int, float),
                       'cavity_collapse': (int, float), 'K': int,
                       'max_perturb_deg': (int, float), 'ramp_voxels': int},
        'keypoints': {'m_keypoints': int, 'contrast_fraction': (int, float), 'sweep_m': list},
        'interpolation': {'method': str, 'lambda_tps': (int, float), 'zero_codes': list},
        'refiner': {'levels': int, 'base_channels': int, 'max_channels': int,
                    'leaky_slope': (int, float), 'use_scse': bool, 'scse_reduction': int,
                    'residual': bool, 'norm': str, 'norm_eps': (int, float),
                    'lambda_reg': (int, float), 'lr': (int, float), 'betas': list,
                    'adam_eps': (int, float), 'epochs': int, 'batch_size': int,
                    'dtype': str, 'normalization': str, 'randomize_m': bool,
                    'm_range': list, 'augment': bool, 'augment_probability': (int, float)},
        'evaluation': {'split': str, 'strict_jacobian': bool, 'percentile': (int, float),
                       'significance': (int, float), 'store_results': bool},
    }

    @classmethod
    def defaults(cls) -> Dict[str, Any]:
        """Fully populated pipeline configuration (fresh copy)"""
        return copy.deepcopy({
            'seed': cls.DEFAULT_SEED,
            'jobs': cls.DEFAULT_JOBS,
            'dump_slices': False,
            'grid': cls.GRID_CONFIG,
            'dataset': cls.DATASET_CONFIG,
            'simulation': cls.SIMULATION_CONFIG,
            'keypoints': cls.KEYPOINT_CONFIG,
            'interpolation': cls.INTERPOLATION_CONFIG,
            'refiner': cls.REFINER_CONFIG,
            'evaluation': cls.EVALUATION_CONFIG,
        })

    @classmethod
    def resolve(cls, config_path: Optional[Union[str, Path]] = None,
                overrides: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
        """Defaults <- JSON file <- flag overrides, then validated"""
        cfg = cls.defaults()
        if config_path:
            path = Path(config_path)
            if not path.exists():
                raise ConfigError(f"config file not found: {path}")
            try:
                with open(path, 'r', encoding='utf-8') as f:
                    user_cfg = json.load(f)
            except json.JSONDecodeError as e:
                raise ConfigError(f"config file {path} is not valid JSON: {e}") from e
            if not isinstance(user_cfg, dict):
                raise ConfigError(f"config file {path} must hold a JSON object")
            cls._merge(cfg, user_cfg, cls.SCHEMA, prefix='')
        for dotted, value in (overrides or {}).items():
            if value is None:
                continue
            cls._set_dotted(cfg, dotted, value)

        invalid = cls.get_invalid_sections(cfg)
        if invalid:
            raise ConfigError(f"invalid configuration: {'; '.join(invalid)}")
        return cfg

    @classmethod
    def _merge(cls, base: Dict, update: Dict, schema: Dict, prefix: str):
        for key, value in update.items():
            name = f"{prefix}{key}"
            if key not in schema:
                raise ConfigError(f"unknown configuration key: {name}")
            if isinstance(schema[key], dict):
                if not isinstance(value, dict):
                    raise ConfigError(f"configuration key {name} must be an object")
                cls._merge(base[key], value, schema[key], prefix=f"{name}.")
            else:
                base[key] = value

    @classmethod
    def _set_dotted(cls, cfg: Dict, dotted: str, value: Any):
        keys = dotted.split('.')
        node, schema = cfg, cls.SCHEMA
        for key in keys[:-1]:
            if key not in schema or not isinstance(schema[key], dict):
                raise ConfigError(f"unknown configuration key: {dotted}")
            node, schema = node[key], schema[key]
        if keys[-1] not in schema:
            raise ConfigError(f"unknown configuration key: {dotted}")
        node[keys[-1]] = value

    @classmethod
    def validate_config(cls, cfg: Dict[str, Any]) -> Dict[str, bool]:
        """Validate configuration and return status of each section"""
        return {section: not cls._section_errors(cfg, section) for section in cls.SCHEMA}

    @classmethod
    def get_invalid_sections(cls, cfg: Dict[str, Any]) -> List[str]:
        """Human readable list of configuration problems"""
        problems = []
        for section in cls.SCHEMA:
            problems.extend(cls._section_errors(cfg, section))
        return problems

    @classmethod
    def _section_errors(cls, cfg: Dict[str, Any], section: str) -> List[str]:
        errors = []
        if section not in cfg:
            return [f"missing section {section}"]
        spec = cls.SCHEMA[section]
        value = cfg[section]
        if not isinstance(spec, dict):
            if not cls._type_ok(value, spec):
                errors.append(f"{section} must be {cls._type_name(spec)}")
            return errors
        if not isinstance(value, dict):
            return [f"{section} must be an object"]
        for key, expected in spec.items():
            if key not in value:
                errors.append(f"missing {section}.{key}")
            elif not cls._type_ok(value[key], expected):
                errors.append(f"{section}.{key} must be {cls._type_name(expected)}")
        if not errors:
            errors.extend(cls._range_errors(section, value))
        return errors

    @staticmethod
    def _type_ok(value: Any, expected) -> bool:
        # bool is an int subclass; only accept it where bool is asked for
        if isinstance(value, bool) and expected is not bool:
            return False
        return isinstance(value, expected)

    @staticmethod
    def _type_name(expected) -> str:
        if isinstance(expected, tuple):
            return ' or '.join(t.__name__ for t in expected)
        return expected.__name__

    @staticmethod
    def _range_errors(section: str, value: Dict[str, Any]) -> List[str]:
        errors = []
        if section == 'grid':
            if len(value['dims']) != 3 or any(int(d) < 2 for d in value['dims']):
                errors.append("grid.dims must be three integers >= 2")
            if len(value['spacing']) != 3 or any(float(s) <= 0 for s in value['spacing']):
                errors.append("grid.spacing must be three positive numbers")
            if len(value['origin']) != 3:
                errors.append("grid.origin must have three components")
        elif section == 'dataset':
            if value['n_cases'] < 1:
                errors.append("dataset.n_cases must be >= 1")
            split = value['split']
            if len(split) != 3 or any(s < 0 for s in split) or abs(sum(split) - 1.0) > 1e-6:
                errors.append("dataset.split must be three non-negative fractions summing to 1")
        elif section == 'simulation':
            if value['sag_magnitude'] < 0:
                errors.append("simulation.sag_magnitude must be >= 0")
            if value['sag_falloff'] <= 0:
                errors.append("simulation.sag_falloff must be > 0")
            if not 0.0 <= value['cavity_collapse'] <= 1.0:
                errors.append("simulation.cavity_collapse must lie in [0, 1]")
            if value['K'] < 1:
                errors.append("simulation.K must be >= 1")
            if value['max_perturb_deg'] < 0:
                errors.append("simulation.max_perturb_deg must be >= 0")
            if value['ramp_voxels'] < 1:
                errors.append("simulation.ramp_voxels must be >= 1")
        elif section == 'keypoints':
            if value['m_keypoints'] < 1:
                errors.append("keypoints.m_keypoints must be >= 1")
            if any((not isinstance(m, int)) or m < 1 for m in value['sweep_m']):
                errors.append("keypoints.sweep_m must hold positive integers")
        elif section == 'interpolation':
            if value['method'] not in ('linear', 'tps'):
                errors.append("interpolation.method must be 'linear' or 'tps'")
            if value['lambda_tps'] < 0:
                errors.append("interpolation.lambda_tps must be >= 0")
        elif section == 'refiner':
            if value['levels'] < 2:
                errors.append("refiner.levels must be >= 2")
            if value['base_channels'] < 1 or value['max_channels'] < value['base_channels']:
                errors.append("refiner channels must satisfy 1 <= base_channels <= max_channels")
            if value['lambda_reg'] < 0:
                errors.append("refiner.lambda_reg must be >= 0")
            if value['norm'] not in ('instance', 'none'):
                errors.append("refiner.norm must be 'instance' or 'none'")
            if value['dtype'] not in ('float32', 'float64'):
                errors.append("refiner.dtype must be 'float32' or 'float64'")
            if value['normalization'] not in ('mask', 'global'):
                errors.append("refiner.normalization must be 'mask' or 'global'")
            if value['batch_size'] != 1:
                errors.append("refiner.batch_size must be 1")
            if len(value['m_range']) != 2 or value['m_range'][0] < 1 or value['m_range'][1] < value['m_range'][0]:
                errors.append("refiner.m_range must be [low, high] with 1 <= low <= high")
        elif section == 'evaluation':
            if value['split'] not in ('train', 'val', 'test', 'all'):
                errors.append("evaluation.split must be train, val, test or all")
            if not 0 < value['percentile'] <= 100:
                errors.append("evaluation.percentile must lie in (0, 100]")
        return errors
