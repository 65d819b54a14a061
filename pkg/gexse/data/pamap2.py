"""
PAMAP2 physical activity monitoring, Protocol recordings at 100 Hz
"""
import glob
import logging
import os
import re
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from gexse.data.interface import SensorDataset
from gexse.data.windows import (
    SplitSpec, WindowSet, concat_window_sets, fill_gaps, make_window_set, normalize_split,
    windows_from_stream
)
from gexse.misc import DataError, thread_count

logger = logging.getLogger(__name__)

ACTIVITIES = OrderedDict([
    (1, 'Lying'),
    (2, 'Sitting'),
    (3, 'Standing'),
    (4, 'Walking'),
    (5, 'Running'),
    (6, 'Cycling'),
    (7, 'Nordic walking'),
    (12, 'Ascending stairs'),
    (13, 'Descending stairs'),
    (16, 'Vacuum cleaning'),
    (17, 'Ironing'),
    (24, 'Rope jumping'),
])
TRANSIENT_ACTIVITY = 0

COLUMN_COUNT = 54
ACTIVITY_COLUMN = 1
HEART_RATE_COLUMN = 2
# first column (temperature) of the hand, chest and ankle IMU blocks
IMU_COLUMNS = (3, 20, 37)
IMU_CHANNELS = (
    (1, 'accelerometer'),  # ±16g
    (4, 'accelerometer'),  # ±6g
    (7, 'gyroscope'),
    (10, 'magnetometer'),
)
DEFAULT_TEST_SUBJECTS = (105, 106)

_SUBJECT_FILE = re.compile(r'subject(\d+)\.dat$')


def channel_layout(include_vitals: bool = False) -> Tuple[List[int], Dict[str, List[int]]]:
    """
    Raw file columns of the model channels and their groups
    :param include_vitals: append heart rate and the three IMU temperatures
    :return: (columns, groups)
    """
    columns: List[int] = []
    groups: Dict[str, List[int]] = OrderedDict(
        (name, []) for name in ('accelerometer', 'gyroscope', 'magnetometer'))
    for base in IMU_COLUMNS:
        for offset, group in IMU_CHANNELS:
            for axis in range(3):
                groups[group].append(len(columns))
                columns.append(base + offset + axis)
    if include_vitals:
        groups['heart_rate'] = [len(columns)]
        columns.append(HEART_RATE_COLUMN)
        groups['temperature'] = []
        for base in IMU_COLUMNS:
            groups['temperature'].append(len(columns))
            columns.append(base)
    return columns, groups


def read_subject_file(path: str, columns: List[int]) -> Tuple[np.ndarray, np.ndarray]:
    """
    Parses one Protocol file
    :return: gap-free (L, C) samples of the selected columns and the (L,) activity ids
    """
    try:
        frame = pd.read_csv(path, sep=r'\s+', header=None, dtype=np.float64)
    except (OSError, ValueError) as error:
        raise DataError('Unable to read {}: {}'.format(path, error))
    if frame.shape[1] != COLUMN_COUNT:
        raise DataError('{} is malformed: expected {} columns, found {}'.format(
            path, COLUMN_COUNT, frame.shape[1]))

    activity = frame[ACTIVITY_COLUMN].to_numpy()
    if np.isnan(activity).any():
        raise DataError('{} has rows without activity id'.format(path))
    activity = activity.astype(np.int64)
    unknown = set(np.unique(activity)) - set(ACTIVITIES) - {TRANSIENT_ACTIVITY}
    if unknown:
        raise DataError('{} contains unknown activity ids {}'.format(path, sorted(unknown)))

    values = fill_gaps(frame[columns].to_numpy(), names=['column {}'.format(c) for c in columns])
    return values, activity


class PAMAP2(SensorDataset):
    """
    2.56 s windows (256 samples) with 50% overlap over 3 IMUs × 12 channels
    """
    window_length = 256
    stride = 128
    label_names = tuple(ACTIVITIES.values())

    def __init__(self, root: str, spec: Optional[SplitSpec] = None,
                 include_vitals: bool = False) -> None:
        super().__init__(root)
        self.spec = spec or SplitSpec.create(DEFAULT_TEST_SUBJECTS)
        self.include_vitals = include_vitals
        self.columns, self.groups = channel_layout(include_vitals)
        self._label_index = {code: i for i, code in enumerate(ACTIVITIES)}

    @classmethod
    def from_config(cls, root: str, config: Dict) -> 'PAMAP2':
        section = config.get('pamap2', {})
        return cls(
            root,
            spec=SplitSpec.create(section.get('test_subjects', DEFAULT_TEST_SUBJECTS)),
            include_vitals=section.get('include_vitals', False),
        )

    def subject_files(self) -> Dict[int, str]:
        """
        Protocol files by subject id, accepts the dataset root or its Protocol directory
        """
        protocol = os.path.join(self.root, 'Protocol')
        directory = protocol if os.path.isdir(protocol) else self.root
        files = {}
        for path in glob.glob(os.path.join(directory, 'subject*.dat')):
            match = _SUBJECT_FILE.search(os.path.basename(path))
            if match:
                files[int(match.group(1))] = path
        if not files:
            raise DataError('No PAMAP2 subject files found in {}'.format(directory))
        missing = sorted(self.spec.test_subjects - set(files))
        if missing:
            raise DataError('Missing subject file for subject {}'.format(missing[0]))
        return files

    def _subject_windows(self, item: Tuple[int, str]) -> WindowSet:
        subject, path = item
        values, activity = read_subject_file(path, self.columns)
        windows, labels, subjects = windows_from_stream(
            values, activity, subject, self.window_length, self.stride, self._label_index)
        logger.info('PAMAP2 subject %d: %d windows', subject, len(labels))
        return make_window_set(windows, labels, subjects, self.label_names, self.groups,
                               'pamap2')

    def split(self) -> Tuple[WindowSet, WindowSet]:
        files = self.subject_files()
        with ThreadPoolExecutor(max_workers=thread_count()) as pool:
            parts = list(pool.map(self._subject_windows, sorted(files.items())))

        splits: Dict[str, List[WindowSet]] = {'train': [], 'test': []}
        for (subject, _), part in zip(sorted(files.items()), parts):
            name = self.spec.assign(subject)
            if name:
                splits[name].append(part)
        if not splits['train']:
            raise DataError('PAMAP2 training split is empty')
        return concat_window_sets(splits['train']), concat_window_sets(splits['test'])


def ingest_pamap2(root: str, spec: Optional[SplitSpec] = None,
                  include_vitals: bool = False) -> Tuple[WindowSet, WindowSet]:
    """
    Normalized PAMAP2 train and test windows
    :param root: dataset root
    :param spec: subject split, defaults to holding out subjects 105 and 106
    :param include_vitals: also emit heart rate and temperature channels
    :return: (train, test)
    """
    return normalize_split(*PAMAP2(root, spec, include_vitals).split())
