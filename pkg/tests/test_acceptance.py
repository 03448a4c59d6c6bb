"""
End-to-end runs on the 50-case synthetic dataset. Slow; enable with
BRAINSHIFT_RUN_ACCEPTANCE=1.
"""
import os

import numpy as np
import pandas as pd
import pytest

from cli import pipeline
from config.config import Config
from formats.documents import read_manifest
from utils.helpers import FileHelper

pytestmark = pytest.mark.slow

JOBS = int(os.getenv('BRAINSHIFT_JOBS', '1'))


def resolved(**overrides):
    base = {'seed': 17, 'jobs': JOBS, 'dataset.n_cases': 50, 'evaluation.split': 'test'}
    base.update(overrides)
    return Config.resolve(overrides=base)


def mean_by_method(document, metric):
    frame = pd.DataFrame(document['reports'])
    return frame.groupby('method')[metric].mean().to_dict()


@pytest.fixture(scope='module')
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("acceptance")
    cfg = resolved()
    pipeline.run_phantom(cfg, root / "data")
    manifest = root / "data" / "manifest.json"
    pipeline.run_simulate(cfg, manifest)
    assert read_manifest(manifest).split_counts() == {'train': 38, 'val': 5, 'test': 7}

    runs = {}
    for method in ('linear', 'tps'):
        cfg = resolved(**{'interpolation.method': method})
        pipeline.run_interpolate(cfg, manifest, root / method)
        checkpoint, _ = pipeline.run_train(cfg, manifest, root / f"model_{method}")
        pipeline.run_refine(cfg, manifest, checkpoint, root / method, root / f"refined_{method}")
        runs[method] = checkpoint

    cfg = resolved(**{'interpolation.method': 'tps', 'refiner.lambda_reg': 0.0})
    checkpoint, _ = pipeline.run_train(cfg, manifest, root / "model_tps_noreg")
    pipeline.run_refine(cfg, manifest, checkpoint, root / "tps", root / "refined_tps_noreg")
    runs['tps_noreg'] = checkpoint
    return root, manifest, runs


def evaluate(root, manifest, methods, out):
    field_dirs = {m: root / m for m in methods}
    document, _ = pipeline.run_eval(resolved(), manifest, field_dirs, root / out)
    return document


def test_refiner_improves_both_interpolators(workspace):
    root, manifest, _ = workspace
    document = evaluate(root, manifest, ['linear', 'tps', 'refined_linear', 'refined_tps'], "eval_main")
    mse = mean_by_method(document, 'mse_brain')
    assert mse['refined_linear'] <= 0.8 * mse['linear']
    assert mse['refined_tps'] <= 0.8 * mse['tps']


def test_jacobian_penalty_reduces_folding(workspace):
    root, manifest, _ = workspace
    document = evaluate(root, manifest, ['refined_tps', 'refined_tps_noreg'], "eval_ablation")
    frame = pd.DataFrame(document['reports']).pivot(index='case_id', columns='method',
                                                    values='pct_nonpos_jacobian')
    assert len(frame) == 7
    assert frame['refined_tps'].mean() <= frame['refined_tps_noreg'].mean()
    assert int((frame['refined_tps'] < frame['refined_tps_noreg']).sum()) >= 5


def test_keypoint_sweep_trend(workspace):
    root, manifest, runs = workspace
    document, _ = pipeline.run_sweep(resolved(), manifest, root / "sweep",
                                     {'linear': runs['linear'], 'tps': runs['tps']})
    trend = document['mean_mse_brain']
    ms = [str(m) for m in document['sweep_m']]
    for method in ('linear', 'tps'):
        values = [trend[m][method] for m in ms]
        assert all(b < a for a, b in zip(values, values[1:])), (method, values)
        for m in ms:
            assert trend[m][f"refined_{method}"] < trend[m][method]


def test_refinement_overhead(workspace):
    root, _, _ = workspace
    timings = FileHelper.load_json(root / "refined_tps" / "timings.json")
    interpolation = np.mean([t['interpolation'] for t in timings.values()])
    refinement = np.mean([t['refinement'] for t in timings.values()])
    assert refinement < 2.0 * interpolation


def test_pipeline_is_deterministic(tmp_path):
    outputs = []
    for run in ('first', 'second'):
        root = tmp_path / run
        cfg = resolved(**{'dataset.n_cases': 8, 'evaluation.split': 'all', 'simulation.K': 1})
        pipeline.run_phantom(cfg, root / "data")
        manifest = root / "data" / "manifest.json"
        pipeline.run_simulate(cfg, manifest)
        pipeline.run_interpolate(cfg, manifest, root / "tps")
        pipeline.run_eval(cfg, manifest, {'tps': root / "tps"}, root / "eval")
        outputs.append((root / "eval" / "eval.json").read_bytes())
    assert outputs[0] == outputs[1]
