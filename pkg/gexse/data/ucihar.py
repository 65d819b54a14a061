"""
UCI-HAR smartphone recordings, published pre-windowed at 128 samples
"""
import logging
import os
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, Tuple

import numpy as np
import pandas as pd

from gexse.data.interface import SensorDataset
from gexse.data.windows import WindowSet, make_window_set, normalize_split
from gexse.misc import DataError, thread_count

logger = logging.getLogger(__name__)

LABELS = (
    'Walking',
    'Walking Upstairs',
    'Walking Downstairs',
    'Sitting',
    'Standing',
    'Laying',
)
SIGNALS = (
    'body_acc_x', 'body_acc_y', 'body_acc_z',
    'body_gyro_x', 'body_gyro_y', 'body_gyro_z',
    'total_acc_x', 'total_acc_y', 'total_acc_z',
)
CHANNEL_GROUPS = OrderedDict([
    ('accelerometer', (0, 1, 2, 6, 7, 8)),
    ('gyroscope', (3, 4, 5)),
])
WINDOW_LENGTH = 128


def _read_table(path: str) -> np.ndarray:
    if not os.path.isfile(path):
        raise DataError('Missing UCI-HAR file {}'.format(path))
    try:
        return pd.read_csv(path, sep=r'\s+', header=None, dtype=np.float64).to_numpy()
    except ValueError as error:
        raise DataError('Unable to parse {}: {}'.format(path, error))


class UCIHAR(SensorDataset):
    window_length = WINDOW_LENGTH
    stride = WINDOW_LENGTH // 2
    label_names = LABELS

    @classmethod
    def from_config(cls, root: str, config: Dict) -> 'UCIHAR':
        return cls(root)

    def read_split(self, split: str) -> WindowSet:
        """
        Reads train or test of the published (subject-disjoint) split
        """
        directory = os.path.join(self.root, split)
        paths = [os.path.join(directory, 'Inertial Signals', '{}_{}.txt'.format(signal, split))
                 for signal in SIGNALS]
        with ThreadPoolExecutor(max_workers=thread_count()) as pool:
            signals = list(pool.map(_read_table, paths))
        labels = _read_table(os.path.join(directory, 'y_{}.txt'.format(split)))[:, 0]
        subjects = _read_table(os.path.join(directory, 'subject_{}.txt'.format(split)))[:, 0]

        for path, signal in zip(paths, signals):
            if signal.shape != (len(labels), WINDOW_LENGTH):
                raise DataError('{} has shape {}, expected {} rows of {} readings'.format(
                    path, signal.shape, len(labels), WINDOW_LENGTH))
        if len(subjects) != len(labels):
            raise DataError('UCI-HAR {}: {} labels but {} subject ids'.format(
                split, len(labels), len(subjects)))
        if len(labels) and (labels.min() < 1 or labels.max() > len(LABELS)):
            raise DataError('UCI-HAR {}: labels outside 1..{}'.format(split, len(LABELS)))

        logger.info('UCI-HAR %s: %d windows', split, len(labels))
        return make_window_set(
            windows=np.stack(signals, axis=1),
            labels=labels.astype(np.int64) - 1,
            subjects=subjects.astype(np.int64),
            label_names=LABELS,
            channel_groups=CHANNEL_GROUPS,
            dataset_id='ucihar',
        )

    def split(self) -> Tuple[WindowSet, WindowSet]:
        return self.read_split('train'), self.read_split('test')


def ingest_ucihar(root: str) -> Tuple[WindowSet, WindowSet]:
    """
    Normalized UCI-HAR train and test windows, 9 channels × 128 readings
    """
    return normalize_split(*UCIHAR(root).split())
