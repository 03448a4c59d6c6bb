import json

import pytest

from config.config import Config
from utils.errors import ConfigError


class TestConfig:
    def test_defaults_are_valid(self):
        cfg = Config.defaults()
        assert all(Config.validate_config(cfg).values())
        assert Config.get_invalid_sections(cfg) == []
        assert cfg['simulation']['K'] == 2
        assert cfg['interpolation']['lambda_tps'] == 0.1
        assert cfg['refiner']['lambda_reg'] == 50.0

    def test_defaults_are_fresh_copies(self):
        cfg = Config.defaults()
        cfg['grid']['dims'][0] = 2
        assert Config.defaults()['grid']['dims'][0] == 48

    def test_dotted_overrides(self):
        cfg = Config.resolve(overrides={'seed': 9, 'simulation.K': 3, 'keypoints.m_keypoints': None})
        assert cfg['seed'] == 9
        assert cfg['simulation']['K'] == 3
        assert cfg['keypoints']['m_keypoints'] == 20

    def test_json_file(self, tmp_path):
        path = tmp_path / "config.json"
        path.write_text(json.dumps({'grid': {'dims': [32, 32, 32]}, 'refiner': {'epochs': 2}}))
        cfg = Config.resolve(path, {'refiner.epochs': 5})
        assert cfg['grid']['dims'] == [32, 32, 32]
        assert cfg['grid']['spacing'] == [3.5, 3.5, 3.5]
        assert cfg['refiner']['epochs'] == 5

    def test_unknown_key_in_file(self, tmp_path):
        path = tmp_path / "config.json"
        path.write_text(json.dumps({'simulation': {'stiffness': 3.0}}))
        with pytest.raises(ConfigError, match="simulation.stiffness"):
            Config.resolve(path)

    def test_unknown_override(self):
        with pytest.raises(ConfigError, match="unknown"):
            Config.resolve(overrides={'refiner.depth': 4})

    @pytest.mark.parametrize("dotted, value", [
        ('simulation.K', 'two'),
        ('refiner.use_scse', 1),
        ('dataset.n_cases', True),
        ('interpolation.lambda_tps', '0.1'),
    ])
    def test_wrong_type(self, dotted, value):
        with pytest.raises(ConfigError, match="must be"):
            Config.resolve(overrides={dotted: value})

    @pytest.mark.parametrize("dotted, value", [
        ('simulation.cavity_collapse', 1.5),
        ('dataset.split', [0.5, 0.5, 0.5]),
        ('grid.dims', [48, 48]),
        ('interpolation.method', 'cubic'),
        ('refiner.m_range', [10, 5]),
        ('evaluation.percentile', 0),
        ('keypoints.sweep_m', [5, 0]),
    ])
    def test_range_errors(self, dotted, value):
        with pytest.raises(ConfigError):
            Config.resolve(overrides={dotted: value})

    def test_validate_reports_sections(self):
        cfg = Config.defaults()
        cfg['interpolation']['lambda_tps'] = -1.0
        status = Config.validate_config(cfg)
        assert status['interpolation'] is False
        assert status['grid'] is True

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            Config.resolve(tmp_path / "absent.json")

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "config.json"
        path.write_text("{seed: 1")
        with pytest.raises(ConfigError, match="JSON"):
            Config.resolve(path)
