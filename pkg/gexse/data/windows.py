"""
Windowed sensor samples and the helpers every dataset reader shares
"""
import logging
from typing import Dict, Iterable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from gexse.misc import ConfigError, DataError, ShapeError

logger = logging.getLogger(__name__)

STD_FLOOR = 1e-8


class NormStats(NamedTuple):
    mean: np.ndarray
    std: np.ndarray


class WindowSet(NamedTuple):
    """
    windows: (W, C, T) float64
    labels: (W,) int64 class indices into label_names
    subjects: (W,) int64 subject ids
    channel_groups: ordered group name -> channel indices, a partition of range(C)
    norm_stats: statistics the windows were normalized with, None for raw windows
    """
    windows: np.ndarray
    labels: np.ndarray
    subjects: np.ndarray
    label_names: Tuple[str, ...]
    channel_groups: Dict[str, Tuple[int, ...]]
    norm_stats: Optional[NormStats]
    dataset_id: str

    @property
    def num_windows(self) -> int:
        return self.windows.shape[0]

    @property
    def channels(self) -> int:
        return self.windows.shape[1]

    @property
    def length(self) -> int:
        return self.windows.shape[2]

    @property
    def num_classes(self) -> int:
        return len(self.label_names)


class SplitSpec(NamedTuple):
    """
    Subject-disjoint split. train_subjects None means every subject not held out.
    """
    test_subjects: frozenset
    train_subjects: Optional[frozenset] = None

    @classmethod
    def create(cls, test_subjects: Iterable[int],
               train_subjects: Optional[Iterable[int]] = None) -> 'SplitSpec':
        test = frozenset(int(s) for s in test_subjects)
        train = None if train_subjects is None else frozenset(int(s) for s in train_subjects)
        if train is not None and train & test:
            raise ConfigError('Subjects {} are in both splits'.format(sorted(train & test)))
        return cls(test_subjects=test, train_subjects=train)

    def assign(self, subject: int) -> Optional[str]:
        """ 'train', 'test' or None for a subject used in neither split """
        if subject in self.test_subjects:
            return 'test'
        if self.train_subjects is None or subject in self.train_subjects:
            return 'train'
        return None


def make_window_set(windows: np.ndarray, labels: np.ndarray, subjects: np.ndarray,
                    label_names: Sequence[str], channel_groups: Dict[str, Sequence[int]],
                    dataset_id: str, norm_stats: Optional[NormStats] = None) -> WindowSet:
    """
    Builds a WindowSet and checks its invariants
    """
    windows = np.ascontiguousarray(windows, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    subjects = np.asarray(subjects, dtype=np.int64)
    if windows.ndim != 3:
        raise ShapeError('windows must be (W, C, T), got {}'.format(windows.shape))
    count = windows.shape[0]
    if labels.shape != (count,) or subjects.shape != (count,):
        raise ShapeError('windows {} do not match labels {} / subjects {}'.format(
            windows.shape, labels.shape, subjects.shape))
    if count and (labels.min() < 0 or labels.max() >= len(label_names)):
        raise DataError('labels outside [0, {})'.format(len(label_names)))

    groups = {name: tuple(int(i) for i in members) for name, members in channel_groups.items()}
    flat = sorted(i for members in groups.values() for i in members)
    if flat != list(range(windows.shape[1])):
        raise DataError('channel groups {} do not partition {} channels'.format(
            {k: len(v) for k, v in groups.items()}, windows.shape[1]))

    return WindowSet(
        windows=windows,
        labels=labels,
        subjects=subjects,
        label_names=tuple(label_names),
        channel_groups=groups,
        norm_stats=norm_stats,
        dataset_id=dataset_id,
    )


def concat_window_sets(parts: Sequence[WindowSet]) -> WindowSet:
    """ Stacks window sets of one dataset, keeps the metadata of the first """
    if not parts:
        raise DataError('No windows to concatenate')
    first = parts[0]
    return make_window_set(
        windows=np.concatenate([p.windows for p in parts]),
        labels=np.concatenate([p.labels for p in parts]),
        subjects=np.concatenate([p.subjects for p in parts]),
        label_names=first.label_names,
        channel_groups=first.channel_groups,
        dataset_id=first.dataset_id,
        norm_stats=first.norm_stats,
    )


def sliding_windows(length: int, window: int, stride: int) -> np.ndarray:
    """
    Start offsets of every full window in a stream
    :return: int array of max(0, floor((length − window) / stride) + 1) offsets
    """
    if window < 1 or stride < 1:
        raise ConfigError('window and stride must be positive, got {} and {}'.format(
            window, stride))
    count = max(0, (length - window) // stride + 1)
    return np.arange(count, dtype=np.int64) * stride


def label_runs(labels: np.ndarray) -> List[Tuple[int, int, int]]:
    """
    Maximal runs of equal labels
    :return: list of (start, stop, label)
    """
    labels = np.asarray(labels)
    if labels.size == 0:
        return []
    changes = np.flatnonzero(labels[1:] != labels[:-1]) + 1
    starts = np.concatenate([[0], changes])
    stops = np.concatenate([changes, [labels.size]])
    return [(int(a), int(b), int(labels[a])) for a, b in zip(starts, stops)]


def fill_gaps(values: np.ndarray, names: Optional[Sequence[str]] = None) -> np.ndarray:
    """
    Linear interpolation of NaN runs per column, edges filled with the nearest value
    :param values: (L, C) samples
    :param names: column names used in error messages
    :return: (L, C) array without NaN
    """
    frame = pd.DataFrame(values)
    empty = frame.columns[frame.isna().all()]
    if len(empty) and len(frame):
        label = names[empty[0]] if names is not None else 'column {}'.format(empty[0])
        raise DataError('Channel {} contains no values'.format(label))
    filled = frame.interpolate(method='linear', limit_direction='both').ffill().bfill()
    return filled.to_numpy(dtype=np.float64)


def windows_from_stream(values: np.ndarray, labels: np.ndarray, subject: int,
                        window: int, stride: int,
                        label_index: Dict[int, int]) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Cuts one recording into windows that never cross a label change.
    Runs whose raw label is not in label_index are dropped.
    :param values: (L, C) gap-free samples
    :param labels: (L,) raw label codes
    :param subject: subject id of the recording
    :param label_index: raw label code -> class index
    :return: windows (W, C, T), labels (W,), subjects (W,)
    """
    collected, classes = [], []
    for start, stop, code in label_runs(labels):
        if code not in label_index:
            continue
        for offset in sliding_windows(stop - start, window, stride):
            begin = start + offset
            collected.append(values[begin:begin + window].T)
            classes.append(label_index[code])
    if not collected:
        return (np.zeros((0, values.shape[1], window)), np.zeros(0, dtype=np.int64),
                np.zeros(0, dtype=np.int64))
    return (np.stack(collected), np.asarray(classes, dtype=np.int64),
            np.full(len(classes), subject, dtype=np.int64))


def check_disjoint(train: WindowSet, test: WindowSet) -> None:
    overlap = set(np.unique(train.subjects)) & set(np.unique(test.subjects))
    if overlap:
        raise DataError('Subjects {} appear in both splits'.format(sorted(overlap)))


def channel_statistics(ws: WindowSet) -> NormStats:
    """ Per-channel mean and population std over windows and time """
    if ws.num_windows == 0:
        raise DataError('Cannot compute statistics of an empty window set')
    mean = ws.windows.mean(axis=(0, 2))
    std = ws.windows.std(axis=(0, 2))
    flat = std < STD_FLOOR
    if np.any(flat):
        logger.warning('Zero-variance channels %s, std floored to %g',
                       np.flatnonzero(flat).tolist(), STD_FLOOR)
        std = np.where(flat, STD_FLOOR, std)
    return NormStats(mean=mean, std=std)


def normalize(ws: WindowSet, stats_from: WindowSet) -> WindowSet:
    """
    Per-channel z-score of ws.
    Statistics come from stats_from: its stored statistics when it is already
    normalized, otherwise they are computed from its raw windows.
    :return: normalized WindowSet carrying the statistics used
    """
    if ws.norm_stats is not None:
        raise DataError('Window set is already normalized')
    if ws.channels != stats_from.channels:
        raise ShapeError('Cannot normalize {} channels with statistics of {}'.format(
            ws.channels, stats_from.channels))
    stats = stats_from.norm_stats or channel_statistics(stats_from)
    windows = (ws.windows - stats.mean[None, :, None]) / stats.std[None, :, None]
    return ws._replace(windows=windows, norm_stats=stats)


def denormalize(ws: WindowSet) -> WindowSet:
    """ Inverse of normalize """
    if ws.norm_stats is None:
        return ws
    stats = ws.norm_stats
    windows = ws.windows * stats.std[None, :, None] + stats.mean[None, :, None]
    return ws._replace(windows=windows, norm_stats=None)


def normalize_split(train: WindowSet, test: WindowSet) -> Tuple[WindowSet, WindowSet]:
    """ Normalizes both splits with training statistics """
    check_disjoint(train, test)
    train = normalize(train, train)
    return train, normalize(test, train)
