"""
Per-activity target embeddings for the representation loss
"""
import logging
from collections import OrderedDict
from typing import Dict, NamedTuple, Optional, Sequence

import numpy as np

from gexse.misc import ConfigError, DataError, make_rng

logger = logging.getLogger(__name__)

MAX_SYNTHETIC_COSINE = 0.35
MAX_SYNTHETIC_ATTEMPTS = 1000


class TeacherTable(NamedTuple):
    embeddings: Dict[str, np.ndarray]
    source: str
    dim: int


def synthesize_table(labels: Sequence[str], dim: int, seed: int) -> TeacherTable:
    """
    Seeded Gaussian vectors, unit-normalized, redrawn until every pair of
    distinct labels has |cosine| below MAX_SYNTHETIC_COSINE
    """
    if len(labels) < 2:
        vectors = make_rng(seed, 'teacher/0').standard_normal((len(labels), dim))
        vectors /= np.linalg.norm(vectors, axis=1, keepdims=True)
        return TeacherTable(OrderedDict(zip(labels, vectors)), 'synthetic', dim)

    off_diagonal = ~np.eye(len(labels), dtype=bool)
    for attempt in range(MAX_SYNTHETIC_ATTEMPTS):
        vectors = make_rng(seed, 'teacher/{}'.format(attempt)).standard_normal((len(labels), dim))
        vectors /= np.linalg.norm(vectors, axis=1, keepdims=True)
        cosine = np.abs(vectors @ vectors.T)[off_diagonal].max()
        if cosine < MAX_SYNTHETIC_COSINE:
            logger.debug('Synthetic teacher table after %d attempts, max |cos| %.3f',
                         attempt + 1, cosine)
            return TeacherTable(OrderedDict(zip(labels, vectors)), 'synthetic', dim)
    raise ConfigError('Cannot separate {} labels in {} dimensions'.format(len(labels), dim))


def read_table_file(path: str, labels: Sequence[str], dim: int) -> TeacherTable:
    """
    Parses `<label name> <v_1> ... <v_N>` lines; label names may contain spaces.
    Lines of labels that are not requested are ignored.
    """
    try:
        with open(path) as file:
            lines = [line.strip() for line in file if line.strip()]
    except OSError as error:
        raise DataError('Unable to read teacher file {}: {}'.format(path, error))

    by_length = sorted(labels, key=len, reverse=True)
    found: Dict[str, np.ndarray] = {}
    for line in lines:
        label = next((name for name in by_length
                      if line.startswith(name) and line[len(name):len(name) + 1].isspace()), None)
        if label is None:
            logger.debug('Ignoring teacher line %r', line[:40])
            continue
        tokens = line[len(label):].split()
        if len(tokens) != dim:
            raise DataError('Teacher embedding for {!r} has {} values, expected {}'.format(
                label, len(tokens), dim))
        try:
            found[label] = np.array([float(token) for token in tokens])
        except ValueError:
            raise DataError('Teacher embedding for {!r} is not numeric'.format(label))

    for label in labels:
        if label not in found:
            raise DataError('Teacher file {} has no embedding for label {!r}'.format(path, label))
    return TeacherTable(OrderedDict((label, found[label]) for label in labels), 'file', dim)


def load_teacher_table(path: Optional[str], labels: Sequence[str], dim: int,
                       seed: int) -> TeacherTable:
    """
    Teacher embeddings from file, or a deterministic synthetic table
    :param path: teacher file or None
    :param labels: activity names in class-index order
    :param dim: embedding width N
    :param seed: run seed for the synthetic table
    :return: TeacherTable
    """
    if path:
        table = read_table_file(path, labels, dim)
    else:
        table = synthesize_table(labels, dim, seed)
    logger.info('Teacher table: %d labels, N=%d, %s', len(labels), dim, table.source)
    return table


def teacher_matrix(table: TeacherTable, label_names: Sequence[str]) -> np.ndarray:
    """ (k, N) targets ordered like label_names """
    try:
        return np.stack([table.embeddings[name] for name in label_names])
    except KeyError as error:
        raise DataError('Teacher table has no embedding for label {}'.format(error))
