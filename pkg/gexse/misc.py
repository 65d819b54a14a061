import argparse
import copy
import json
import logging
import os
import platform
import time
import zlib
from contextlib import contextmanager
from typing import Any, Dict, Iterator, List, Optional

import arrow
import numpy as np
import pandas
import scipy
import sklearn
from jsonschema import Draft4Validator, validate
from jsonschema.exceptions import ValidationError, best_match

from gexse import __version__

logger = logging.getLogger(__name__)


class GexseException(Exception):
    """ Base class of all errors raised by gexse, carries the CLI exit code """
    exit_code = 1


class ConfigError(GexseException):
    exit_code = 1


class DataError(GexseException):
    exit_code = 2


class ShapeError(DataError, ValueError):
    exit_code = 2


class NumericError(GexseException):
    exit_code = 3


def make_rng(seed: int, consumer: str) -> np.random.Generator:
    """
    Returns the counter-based generator of the given consumer.
    Every consumer gets its own key derived from (seed, consumer), so streams
    never overlap and a fixed seed reproduces all of them bit-exactly.
    :param seed: run seed
    :param consumer: stable consumer name, e.g. 'weights' or 'shuffle'
    :return: numpy Generator backed by Philox
    """
    sequence = np.random.SeedSequence(
        entropy=int(seed),
        spawn_key=(zlib.crc32(consumer.encode('utf-8')),),
    )
    return np.random.Generator(np.random.Philox(sequence))


def thread_count() -> int:
    """
    Number of worker threads, capped by the GEXSE_THREADS environment variable
    :return: int >= 1
    """
    available = os.cpu_count() or 1
    cap = os.environ.get('GEXSE_THREADS')
    if not cap:
        return available
    try:
        return max(1, min(available, int(cap)))
    except ValueError:
        raise ConfigError('GEXSE_THREADS must be an integer, got {!r}'.format(cap))


def load_config(path: str) -> Dict:
    """
    Loads a config file from the given path
    :param path: path as str
    :return: configuration as dictionary
    """
    try:
        with open(path) as file:
            conf = json.load(file)
    except (OSError, json.JSONDecodeError) as error:
        raise ConfigError('Unable to read config {}: {}'.format(path, error))
    logger.info('Validating configuration ...')
    validate_config(conf)
    return conf


def validate_config(conf: Dict) -> None:
    """
    Validates a (partial or merged) configuration against CONF_SCHEMA
    :param conf: configuration dictionary
    :return: None
    """
    try:
        validate(conf, CONF_SCHEMA)
    except ValidationError:
        raise ConfigError(
            best_match(Draft4Validator(CONF_SCHEMA).iter_errors(conf)).message
        )


def merge_config(base: Dict, override: Dict) -> Dict:
    """
    Deep merges override into a copy of base, sections are merged key by key
    :return: merged dictionary
    """
    merged = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = merge_config(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def resolve_config(args: argparse.Namespace) -> Dict:
    """
    Builds the effective run configuration.
    Precedence is flags > config file > DEFAULT_CONF.
    :param args: parsed command line
    :return: validated configuration dictionary
    """
    conf = copy.deepcopy(DEFAULT_CONF)
    if getattr(args, 'config', None):
        conf = merge_config(conf, load_config(args.config))

    for flag, path in FLAG_MAP.items():
        value = getattr(args, flag, None)
        if value is None:
            continue
        section = conf
        for key in path[:-1]:
            section = section.setdefault(key, {})
        section[path[-1]] = value

    validate_config(conf)
    return conf


@contextmanager
def timed(timings: Dict[str, float], phase: str) -> Iterator[None]:
    """ Records the wall time of the enclosed block under timings[phase] """
    start = time.perf_counter()
    try:
        yield
    finally:
        timings[phase] = round(time.perf_counter() - start, 6)


def write_run_manifest(out_dir: str, command: str, conf: Dict,
                       timings: Dict[str, float], started: arrow.Arrow,
                       extra: Optional[Dict[str, Any]] = None) -> str:
    """
    Writes run_manifest.json next to the outputs of a command
    :param out_dir: output directory
    :param command: command name
    :param conf: effective configuration (echoed verbatim)
    :param timings: per-phase wall times in seconds
    :param started: start time of the command
    :param extra: additional command specific fields
    :return: path of the manifest
    """
    os.makedirs(out_dir, exist_ok=True)
    manifest = {
        'command': command,
        'seed': conf.get('seed'),
        'config': conf,
        'versions': {
            'gexse': __version__,
            'python': platform.python_version(),
            'numpy': np.__version__,
            'scipy': scipy.__version__,
            'pandas': pandas.__version__,
            'scikit-learn': sklearn.__version__,
        },
        'started': started.isoformat(),
        'finished': arrow.utcnow().isoformat(),
        'timings': timings,
    }
    if extra:
        manifest.update(extra)
    path = os.path.join(out_dir, 'run_manifest.json')
    with open(path, 'w') as file:
        json.dump(manifest, file, indent=2, sort_keys=True, default=str)
    logger.debug('Wrote run manifest %s', path)
    return path


class _ArgumentParser(argparse.ArgumentParser):
    """ Exits with code 1 on usage errors """

    def error(self, message: str) -> None:
        self.print_usage()
        self.exit(1, '{}: error: {}\n'.format(self.prog, message))


def parse_args(args: List[str]) -> argparse.Namespace:
    """
    Parses given arguments and returns an argparse Namespace instance.
    The selected subcommand is stored in `command`.
    """
    parser = _ArgumentParser(
        description='Multi-task FFC encoder for sensor based activity recognition '
                    'with symbolic visual explanations'
    )
    parser.add_argument(
        '-c', '--config',
        help='specify configuration file (optional)',
        dest='config',
        default=None,
        type=str,
        metavar='PATH',
    )
    parser.add_argument(
        '-v', '--verbose',
        help='be verbose',
        action='store_const',
        dest='loglevel',
        const=logging.DEBUG,
        default=logging.INFO,
    )
    parser.add_argument(
        '--version',
        action='version',
        version='%(prog)s {}'.format(__version__),
    )
    build_subcommands(parser)
    parsed_args = parser.parse_args(args)
    if not getattr(parsed_args, 'command', None):
        parser.error('a subcommand is required')
    return parsed_args


def _common_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--out', help='output directory', dest='out', type=str, metavar='DIR')
    common.add_argument('--seed', help='run seed', dest='seed', type=int, metavar='INT')
    return common


def build_subcommands(parser: argparse.ArgumentParser) -> None:
    """ Builds and attaches all subcommands """
    common = _common_parser()
    subparsers = parser.add_subparsers(dest='subparser', parser_class=_ArgumentParser)

    ingest = subparsers.add_parser('ingest', parents=[common], help='window and cache a dataset')
    ingest.set_defaults(command='ingest')
    ingest.add_argument('--dataset', dest='dataset', choices=DATASET_IDS)
    ingest.add_argument('--root', dest='root', type=str, metavar='DIR',
                        help='root directory of the raw dataset')
    ingest.add_argument('--vitals', dest='vitals', action='store_const', const=True,
                        help='PAMAP2: append heart rate and temperature channels')

    train = subparsers.add_parser('train', parents=[common], help='train the encoder')
    train.set_defaults(command='train')
    train.add_argument('--dataset', dest='dataset', choices=DATASET_IDS)
    train.add_argument('--cache-dir', dest='cache_dir', type=str, metavar='DIR',
                       help='directory holding <dataset>_train/_test caches')
    train.add_argument('--epochs', dest='epochs', type=int, metavar='INT')
    train.add_argument('--alpha', dest='alpha', type=float, metavar='FLOAT',
                       help='weight of the representation loss')
    train.add_argument('--beta', dest='beta', type=float, metavar='FLOAT',
                       help='weight of the classification loss')
    train.add_argument('--lr', dest='lr', type=float, metavar='FLOAT')
    train.add_argument('--batch-size', dest='batch_size', type=int, metavar='INT')
    train.add_argument('--blocks', dest='blocks', type=int, metavar='INT')
    train.add_argument('--width', dest='width', type=int, metavar='INT')
    train.add_argument('--teacher', dest='teacher', type=str, metavar='PATH',
                       help='teacher embedding file (synthetic table if omitted)')

    evaluate = subparsers.add_parser('eval', parents=[common], help='evaluate a checkpoint')
    evaluate.set_defaults(command='eval')
    evaluate.add_argument('--checkpoint', dest='checkpoint', type=str, metavar='PATH',
                          required=True)
    evaluate.add_argument('--cache', dest='cache', type=str, metavar='PATH', required=True)
    evaluate.add_argument('--teacher', dest='teacher', type=str, metavar='PATH')

    explain = subparsers.add_parser('explain', parents=[common], help='render a cue manifest')
    explain.set_defaults(command='explain')
    explain.add_argument('--checkpoint', dest='checkpoint', type=str, metavar='PATH', required=True)
    explain.add_argument('--cache', dest='cache', type=str, metavar='PATH', required=True)
    explain.add_argument('--window-index', dest='window_index', type=int, default=0, metavar='INT')
    explain.add_argument('--base-frames', dest='base_frames', type=str, metavar='DIR')
    explain.add_argument('--saliency', dest='saliency', choices=['gradient', 'energy'])

    diffuse = subparsers.add_parser('diffuse', help='toy conditional diffusion')
    diffuse_sub = diffuse.add_subparsers(dest='diffuse_command', parser_class=_ArgumentParser)
    diffuse_train = diffuse_sub.add_parser('train', parents=[common],
                                           help='train denoiser and noisy classifier')
    diffuse_train.set_defaults(command='diffuse', diffuse_command='train')
    diffuse_train.add_argument('--steps', dest='steps', type=int, metavar='INT')
    diffuse_train.add_argument('--iterations', dest='iterations', type=int, metavar='INT')
    diffuse_sample = diffuse_sub.add_parser('sample', parents=[common], help='guided sampling')
    diffuse_sample.set_defaults(command='diffuse', diffuse_command='sample')
    diffuse_sample.add_argument('--model', dest='model', type=str, metavar='PATH', required=True)
    diffuse_sample.add_argument('--label', dest='label', type=int, default=0, metavar='INT')
    diffuse_sample.add_argument('--guidance-scale', dest='guidance_scale', type=float,
                                metavar='FLOAT')
    diffuse_sample.add_argument('--samples', dest='samples', type=int, metavar='INT')

    verify = subparsers.add_parser('verify', parents=[common], help='run verification suites')
    verify.set_defaults(command='verify')
    verify.add_argument('--suite', dest='suite', default='all',
                        choices=['gradcheck', 'fft', 'metrics', 'all'])

    baseline = subparsers.add_parser('baseline', parents=[common], help='linear-probe baseline')
    baseline.set_defaults(command='baseline')
    baseline.add_argument('--dataset', dest='dataset', choices=DATASET_IDS)
    baseline.add_argument('--cache-dir', dest='cache_dir', type=str, metavar='DIR')

    combine = subparsers.add_parser('combine', parents=[common],
                                    help='cross-dataset table from report directories')
    combine.set_defaults(command='combine')
    combine.add_argument('reports', nargs='+', metavar='DIR')


DATASET_IDS = ['pamap2', 'ucihar', 'opportunity']

# Maps argparse destinations onto configuration paths
FLAG_MAP = {
    'dataset': ('dataset',),
    'root': ('root',),
    'out': ('out',),
    'seed': ('seed',),
    'teacher': ('teacher',),
    'epochs': ('train', 'epochs'),
    'alpha': ('train', 'alpha'),
    'beta': ('train', 'beta'),
    'lr': ('train', 'learning_rate'),
    'batch_size': ('train', 'batch_size'),
    'blocks': ('encoder', 'n_blocks'),
    'width': ('encoder', 'width'),
    'vitals': ('pamap2', 'include_vitals'),
    'saliency': ('explain', 'saliency'),
    'steps': ('diffusion', 'steps'),
    'iterations': ('diffusion', 'iterations'),
    'samples': ('diffusion', 'samples'),
    'guidance_scale': ('diffusion', 'guidance_scale'),
}

DEFAULT_CONF = {
    'dataset': 'ucihar',
    'root': None,
    'out': 'out',
    'seed': 0,
    'teacher': None,
    'teacher_dim': 64,
    'encoder': {
        'width': None,
        'n_blocks': 2,
        'stem_kernel_size': 9,
        'head_kernel_size': 3,
    },
    'train': {
        'alpha': 1.0,
        'beta': 1.0,
        'learning_rate': 1e-3,
        'epochs': 300,
        'batch_size': 128,
        'weight_decay': 0.01,
        'checkpoint_every': 50,
    },
    'pamap2': {
        'test_subjects': [105, 106],
        'include_vitals': False,
    },
    'opportunity': {
        'test_subjects': [4],
        'channel_map': None,
    },
    'explain': {
        'base_fps': 24.0,
        'saliency': 'gradient',
    },
    'diffusion': {
        'steps': 500,
        'iterations': 3000,
        'batch_size': 256,
        'learning_rate': 2e-3,
        'samples': 500,
        'guidance_scale': 2.0,
    },
}

# Required json-schema for user specified config
CONF_SCHEMA = {
    '$schema': 'http://json-schema.org/draft-04/schema#',
    'type': 'object',
    'properties': {
        'dataset': {'type': 'string', 'enum': DATASET_IDS},
        'root': {'type': ['string', 'null']},
        'out': {'type': 'string'},
        'seed': {'type': 'integer', 'minimum': 0},
        'teacher': {'type': ['string', 'null']},
        'teacher_dim': {'type': 'integer', 'minimum': 1},
        'encoder': {
            'type': 'object',
            'properties': {
                'width': {'type': ['integer', 'null'], 'minimum': 4, 'multipleOf': 4},
                'n_blocks': {'type': 'integer', 'minimum': 1},
                'stem_kernel_size': {'$ref': '#/definitions/odd_kernel'},
                'head_kernel_size': {'$ref': '#/definitions/odd_kernel'},
            }
        },
        'train': {
            'type': 'object',
            'properties': {
                'alpha': {'type': 'number', 'minimum': 0},
                'beta': {'type': 'number', 'minimum': 0},
                'learning_rate': {'type': 'number', 'minimum': 0, 'exclusiveMinimum': True},
                'epochs': {'type': 'integer', 'minimum': 1},
                'batch_size': {'type': 'integer', 'minimum': 1},
                'weight_decay': {'type': 'number', 'minimum': 0},
                'checkpoint_every': {'type': 'integer', 'minimum': 0},
            }
        },
        'pamap2': {
            'type': 'object',
            'properties': {
                'test_subjects': {'$ref': '#/definitions/subjects'},
                'include_vitals': {'type': 'boolean'},
            }
        },
        'opportunity': {
            'type': 'object',
            'properties': {
                'test_subjects': {'$ref': '#/definitions/subjects'},
                'channel_map': {'type': ['string', 'null']},
            }
        },
        'explain': {
            'type': 'object',
            'properties': {
                'base_fps': {'type': 'number', 'minimum': 0, 'exclusiveMinimum': True},
                'saliency': {'type': 'string', 'enum': ['gradient', 'energy']},
            }
        },
        'diffusion': {
            'type': 'object',
            'properties': {
                'steps': {'type': 'integer', 'minimum': 1},
                'iterations': {'type': 'integer', 'minimum': 1},
                'batch_size': {'type': 'integer', 'minimum': 1},
                'learning_rate': {'type': 'number', 'minimum': 0, 'exclusiveMinimum': True},
                'samples': {'type': 'integer', 'minimum': 1},
                'guidance_scale': {'type': 'number', 'minimum': 0},
            }
        },
    },
    'definitions': {
        'odd_kernel': {'type': 'integer', 'minimum': 1, 'not': {'multipleOf': 2}},
        'subjects': {
            'type': 'array',
            'items': {'type': 'integer'},
            'minItems': 1,
            'uniqueItems': True,
        },
    },
}
