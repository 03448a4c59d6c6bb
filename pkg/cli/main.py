"""
brainshift command line: dataset generation, keypoints, interpolation,
refiner training/application, evaluation and the keypoint-count sweep.

Exit codes: 0 success, 2 validation error, 1 any other failure.
"""
import functools
import json
import sys
from pathlib import Path
from typing import Any, Dict, Optional

import click

from cli import pipeline
from config.config import Config
from utils.errors import ValidationError
from utils.logger import get_logger

CONTEXT_SETTINGS = dict(help_option_names=['-h', '--help'])

EXIT_VALIDATION = 2
EXIT_RUNTIME = 1


def _configure_torch():
    if Config.TORCH_THREADS > 0:
        import torch
        torch.set_num_threads(Config.TORCH_THREADS)


def resolve_config(config_path: Optional[str], **flags) -> Dict[str, Any]:
    """Defaults <- --config file <- individual flags"""
    overrides = {
        'seed': flags.get('seed'),
        'jobs': flags.get('jobs'),
        'dump_slices': flags.get('dump_slices') or None,
        'interpolation.method': flags.get('method'),
        'interpolation.lambda_tps': flags.get('lambda_tps'),
        'keypoints.m_keypoints': flags.get('m_keypoints'),
        'refiner.lambda_reg': flags.get('lambda_reg'),
        'refiner.epochs': flags.get('epochs'),
        'evaluation.split': flags.get('split'),
    }
    return Config.resolve(config_path, overrides)


def pipeline_command(func):
    """Map toolkit exceptions onto exit codes"""
    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        logger = get_logger('brainshift.cli')
        try:
            _configure_torch()
            return func(*args, **kwargs)
        except click.exceptions.Exit:
            raise
        except click.ClickException:
            raise
        except ValidationError as e:
            logger.error(f"{func.__name__.replace('_', '-')}: {e}")
            sys.exit(EXIT_VALIDATION)
        except Exception as e:
            logger.critical(f"{func.__name__.replace('_', '-')} failed: {e}")
            sys.exit(EXIT_RUNTIME)
    return wrapper


def common_options(func):
    options = [
        click.option('--config', 'config_path', type=click.Path(dir_okay=False), default=None,
                     help='JSON configuration file (defaults embedded)'),
        click.option('--seed', type=int, default=None, help='Master seed'),
        click.option('--jobs', type=int, default=None, help='Worker processes for per-case stages'),
        click.option('--dump-slices', is_flag=True, default=False, help='Write PGM mid-slices for debugging'),
    ]
    for option in reversed(options):
        func = option(func)
    return func


def _parse_named(values, separator: str, what: str) -> Dict[str, str]:
    named = {}
    for value in values:
        if separator not in value:
            raise ValidationError(f"{what} must look like NAME{separator}VALUE, got '{value}'")
        name, _, rest = value.partition(separator)
        named[name] = rest
    return named


@click.group(context_settings=CONTEXT_SETTINGS)
def cli():
    """Sparse keypoint displacements to dense brain-shift fields"""


@cli.command()
@common_options
@click.option('--out', required=True, type=click.Path(file_okay=False), help='Dataset directory')
@click.option('--n-cases', type=int, default=None, help='Number of phantoms (default from config)')
@pipeline_command
def phantom(config_path, seed, jobs, dump_slices, out, n_cases):
    """Generate phantoms and a manifest"""
    cfg = resolve_config(config_path, seed=seed, jobs=jobs, dump_slices=dump_slices)
    manifest = pipeline.run_phantom(cfg, out, n_cases)
    click.echo(json.dumps(manifest.split_counts(), sort_keys=True))


@cli.command()
@common_options
@click.option('--manifest', required=True, type=click.Path(exists=True, dir_okay=False))
@pipeline_command
def simulate(config_path, seed, jobs, dump_slices, manifest):
    """Simulate K certified ground-truth fields per phantom"""
    cfg = resolve_config(config_path, seed=seed, jobs=jobs, dump_slices=dump_slices)
    result = pipeline.run_simulate(cfg, manifest)
    click.echo(f"{len(result.cases)} cases x {result.sim_params['K']} fields")


@cli.command()
@common_options
@click.option('--manifest', required=True, type=click.Path(exists=True, dir_okay=False))
@click.option('--out', required=True, type=click.Path(file_okay=False))
@click.option('--m-keypoints', type=int, default=None)
@click.option('--split', type=click.Choice(['train', 'val', 'test', 'all']), default=None)
@pipeline_command
def keypoints(config_path, seed, jobs, dump_slices, manifest, out, m_keypoints, split):
    """Detect and sample keypoints for every case of a split"""
    cfg = resolve_config(config_path, seed=seed, jobs=jobs, dump_slices=dump_slices,
                         m_keypoints=m_keypoints, split=split)
    paths = pipeline.run_keypoints(cfg, manifest, out)
    click.echo(f"{len(paths)} keypoint sets written to {out}")


@cli.command()
@common_options
@click.option('--manifest', required=True, type=click.Path(exists=True, dir_okay=False))
@click.option('--out', required=True, type=click.Path(file_okay=False))
@click.option('--method', type=click.Choice(['linear', 'tps']), default=None)
@click.option('--lambda-tps', type=float, default=None)
@click.option('--m-keypoints', type=int, default=None)
@click.option('--keypoints', 'keypoints_dir', type=click.Path(exists=True, file_okay=False), default=None,
              help='Keypoint sets from the keypoints stage (drawn on the fly when omitted)')
@click.option('--split', type=click.Choice(['train', 'val', 'test', 'all']), default=None)
@pipeline_command
def interpolate(config_path, seed, jobs, dump_slices, manifest, out, method, lambda_tps,
                m_keypoints, keypoints_dir, split):
    """Dense initial fields from keypoints (linear or TPS, rigid tissue zeroed)"""
    cfg = resolve_config(config_path, seed=seed, jobs=jobs, dump_slices=dump_slices, method=method,
                         lambda_tps=lambda_tps, m_keypoints=m_keypoints, split=split)
    document = pipeline.run_interpolate(cfg, manifest, out, keypoints_dir)
    click.echo(f"Fields written to {Path(document).parent}")


@cli.command()
@common_options
@click.option('--manifest', required=True, type=click.Path(exists=True, dir_okay=False))
@click.option('--out', required=True, type=click.Path(file_okay=False))
@click.option('--method', type=click.Choice(['linear', 'tps']), default=None,
              help='Interpolator producing the initial field during training')
@click.option('--lambda-tps', type=float, default=None)
@click.option('--lambda-reg', type=float, default=None)
@click.option('--m-keypoints', type=int, default=None)
@click.option('--epochs', type=int, default=None)
@pipeline_command
def train(config_path, seed, jobs, dump_slices, manifest, out, method, lambda_tps, lambda_reg,
          m_keypoints, epochs):
    """Train the residual refiner on the train split"""
    cfg = resolve_config(config_path, seed=seed, jobs=jobs, dump_slices=dump_slices, method=method,
                         lambda_tps=lambda_tps, lambda_reg=lambda_reg, m_keypoints=m_keypoints,
                         epochs=epochs)
    path, history = pipeline.run_train(cfg, manifest, out)
    click.echo(f"Checkpoint: {path}")
    click.echo(json.dumps(history, sort_keys=True))


@cli.command()
@common_options
@click.option('--manifest', required=True, type=click.Path(exists=True, dir_okay=False))
@click.option('--checkpoint', required=True, type=click.Path(exists=True, dir_okay=False))
@click.option('--fields', 'fields_dir', required=True, type=click.Path(exists=True, file_okay=False),
              help='Initial fields written by the interpolate stage')
@click.option('--out', required=True, type=click.Path(file_okay=False))
@pipeline_command
def refine(config_path, seed, jobs, dump_slices, manifest, checkpoint, fields_dir, out):
    """Apply a trained refiner to initial fields"""
    cfg = resolve_config(config_path, seed=seed, jobs=jobs, dump_slices=dump_slices)
    document = pipeline.run_refine(cfg, manifest, checkpoint, fields_dir, out)
    click.echo(f"Refined fields written to {Path(document).parent}")


@cli.command(name='eval')
@common_options
@click.option('--manifest', required=True, type=click.Path(exists=True, dir_okay=False))
@click.option('--fields', 'fields', multiple=True, required=True,
              help='METHOD=DIR, repeatable; DIR from the interpolate or refine stage')
@click.option('--compare', 'compare', multiple=True,
              help='METHOD:BASELINE pair for the paired signed-rank test, repeatable')
@click.option('--out', required=True, type=click.Path(file_okay=False))
@click.option('--db', 'db_url', default=None, help='SQLAlchemy URL to store case reports')
@pipeline_command
def evaluate(config_path, seed, jobs, dump_slices, manifest, fields, compare, out, db_url):
    """Per-case reports, comparisons and the mean (std) table"""
    cfg = resolve_config(config_path, seed=seed, jobs=jobs, dump_slices=dump_slices)
    field_dirs = _parse_named(fields, '=', '--fields')
    pairs = list(_parse_named(compare, ':', '--compare').items())
    _, table = pipeline.run_eval(cfg, manifest, field_dirs, out, pairs, db_url)
    click.echo(table)


@cli.command(name='sweep-m')
@common_options
@click.option('--manifest', required=True, type=click.Path(exists=True, dir_okay=False))
@click.option('--out', required=True, type=click.Path(file_okay=False))
@click.option('--checkpoint', 'checkpoints', multiple=True,
              help='INIT_METHOD=PATH refiner trained on that initialisation, repeatable')
@click.option('--lambda-tps', type=float, default=None)
@click.option('--db', 'db_url', default=None, help='SQLAlchemy URL to store case reports')
@pipeline_command
def sweep_m(config_path, seed, jobs, dump_slices, manifest, out, checkpoints, lambda_tps, db_url):
    """Metrics across keypoint counts for both interpolators (and refiners)"""
    cfg = resolve_config(config_path, seed=seed, jobs=jobs, dump_slices=dump_slices, lambda_tps=lambda_tps)
    _, text = pipeline.run_sweep(cfg, manifest, out, _parse_named(checkpoints, '=', '--checkpoint'), db_url)
    click.echo(text)


def main():
    cli()


if __name__ == '__main__':
    main()
