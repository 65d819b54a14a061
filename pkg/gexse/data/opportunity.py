"""
Opportunity activity recognition, mid-level gestures at 30 Hz
"""
import glob
import json
import logging
import os
import re
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, List, NamedTuple, Optional, Tuple

import numpy as np
import pandas as pd

from gexse.data.interface import SensorDataset
from gexse.data.windows import (
    SplitSpec, WindowSet, concat_window_sets, fill_gaps, make_window_set, normalize_split,
    windows_from_stream
)
from gexse.misc import ConfigError, DataError, thread_count

logger = logging.getLogger(__name__)

GESTURES = OrderedDict([
    (406516, 'Open Door 1'),
    (406517, 'Open Door 2'),
    (404516, 'Close Door 1'),
    (404517, 'Close Door 2'),
    (406520, 'Open Fridge'),
    (404520, 'Close Fridge'),
    (406505, 'Open Dishwasher'),
    (404505, 'Close Dishwasher'),
    (406519, 'Open Drawer 1'),
    (404519, 'Close Drawer 1'),
    (406511, 'Open Drawer 2'),
    (404511, 'Close Drawer 2'),
    (406508, 'Open Drawer 3'),
    (404508, 'Close Drawer 3'),
    (408512, 'Clean Table'),
    (407521, 'Drink from Cup'),
    (405506, 'Toggle Switch'),
])
NULL_GESTURE = 0

DEFAULT_CHANNEL_MAP = os.path.join(os.path.dirname(__file__), 'opportunity_channels.json')
DEFAULT_TEST_SUBJECTS = (4,)

_RECORDING_FILE = re.compile(r'S(\d+)-(ADL\d+|Drill)\.dat$')


class ChannelMap(NamedTuple):
    """ 0-based file columns of the model channels, their names and groups """
    columns: List[int]
    names: List[str]
    groups: Dict[str, List[int]]
    label_column: int


def load_channel_map(path: Optional[str] = None) -> ChannelMap:
    """
    Reads the editable channel selection, columns in the file are 1-based
    :param path: JSON file, defaults to the shipped 77-channel selection
    :return: ChannelMap
    """
    path = path or DEFAULT_CHANNEL_MAP
    try:
        with open(path) as file:
            raw = json.load(file)
        entries = raw['channels']
        columns = [int(entry['column']) - 1 for entry in entries]
        names = [str(entry['name']) for entry in entries]
        label_column = int(raw['label_column']) - 1
    except (OSError, ValueError, KeyError, TypeError) as error:
        raise ConfigError('Invalid channel map {}: {}'.format(path, error))

    groups: Dict[str, List[int]] = OrderedDict()
    for index, entry in enumerate(entries):
        groups.setdefault(entry['group'], []).append(index)
    if len(set(columns)) != len(columns):
        raise ConfigError('Channel map {} selects a column twice'.format(path))
    return ChannelMap(columns=columns, names=names, groups=groups, label_column=label_column)


def read_recording(path: str, channel_map: ChannelMap) -> Tuple[np.ndarray, np.ndarray]:
    """
    Parses one ADL or Drill recording
    :return: gap-free (L, C) samples and the (L,) gesture codes
    """
    try:
        frame = pd.read_csv(path, sep=r'\s+', header=None, dtype=np.float64)
    except (OSError, ValueError) as error:
        raise DataError('Unable to read {}: {}'.format(path, error))
    needed = max(channel_map.columns + [channel_map.label_column])
    if needed >= frame.shape[1]:
        raise DataError('{} has {} columns, channel map needs column {}'.format(
            path, frame.shape[1], needed + 1))

    codes = frame[channel_map.label_column].fillna(NULL_GESTURE).to_numpy().astype(np.int64)
    values = fill_gaps(frame[channel_map.columns].to_numpy(), names=channel_map.names)
    return values, codes


class Opportunity(SensorDataset):
    """
    3 s windows (90 samples) with 50% overlap over the channels of a ChannelMap
    """
    window_length = 90
    stride = 45
    label_names = tuple(GESTURES.values())

    def __init__(self, root: str, spec: Optional[SplitSpec] = None,
                 channel_map: Optional[ChannelMap] = None) -> None:
        super().__init__(root)
        self.spec = spec or SplitSpec.create(DEFAULT_TEST_SUBJECTS)
        self.channel_map = channel_map or load_channel_map()
        self._label_index = {code: i for i, code in enumerate(GESTURES)}

    @classmethod
    def from_config(cls, root: str, config: Dict) -> 'Opportunity':
        section = config.get('opportunity', {})
        return cls(
            root,
            spec=SplitSpec.create(section.get('test_subjects', DEFAULT_TEST_SUBJECTS)),
            channel_map=load_channel_map(section.get('channel_map')),
        )

    def recordings(self) -> List[Tuple[int, str]]:
        """
        (subject, path) of every S<n>-ADL<m>.dat and S<n>-Drill.dat under root
        """
        found = []
        for path in sorted(glob.glob(os.path.join(self.root, '**', 'S*-*.dat'), recursive=True)):
            match = _RECORDING_FILE.search(os.path.basename(path))
            if match:
                found.append((int(match.group(1)), path))
        if not found:
            raise DataError('No Opportunity recordings found in {}'.format(self.root))
        return found

    def _recording_windows(self, item: Tuple[int, str]) -> WindowSet:
        subject, path = item
        values, codes = read_recording(path, self.channel_map)
        unknown = set(np.unique(codes)) - set(GESTURES) - {NULL_GESTURE}
        if unknown:
            raise DataError('{} contains unknown gesture codes {}'.format(path, sorted(unknown)))
        windows, labels, subjects = windows_from_stream(
            values, codes, subject, self.window_length, self.stride, self._label_index)
        logger.info('Opportunity %s: %d windows', os.path.basename(path), len(labels))
        return make_window_set(windows, labels, subjects, self.label_names,
                               self.channel_map.groups, 'opportunity')

    def split(self) -> Tuple[WindowSet, WindowSet]:
        recordings = self.recordings()
        with ThreadPoolExecutor(max_workers=thread_count()) as pool:
            parts = list(pool.map(self._recording_windows, recordings))

        splits: Dict[str, List[WindowSet]] = {'train': [], 'test': []}
        for (subject, _), part in zip(recordings, parts):
            name = self.spec.assign(subject)
            if name:
                splits[name].append(part)
        for name, members in splits.items():
            if not members:
                raise DataError('Opportunity {} split is empty'.format(name))
        return concat_window_sets(splits['train']), concat_window_sets(splits['test'])


def ingest_opportunity(root: str, spec: Optional[SplitSpec] = None,
                       channel_map: Optional[ChannelMap] = None) -> Tuple[WindowSet, WindowSet]:
    """
    Normalized Opportunity train and test windows
    :param root: directory holding the S1-S4 ADL and Drill recordings
    :param spec: subject split, defaults to holding out subject 4
    :param channel_map: channel selection, defaults to the shipped 77 channels
    :return: (train, test)
    """
    return normalize_split(*Opportunity(root, spec, channel_map).split())
