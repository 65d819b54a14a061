# pragma pylint: disable=missing-docstring
import copy
import os

import numpy as np
import pytest

from gexse.data.pamap2 import COLUMN_COUNT
from gexse.data.ucihar import SIGNALS
from gexse.data.windows import make_window_set, normalize_split
from gexse.encoder import EncoderConfig
from gexse.misc import DEFAULT_CONF, validate_config

TINY_LABELS = ('Walking', 'Sitting', 'Cycling', 'Ironing')
TINY_GROUPS = {'accelerometer': (0, 1), 'gyroscope': (2,)}


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


@pytest.fixture
def default_conf():
    """ Returns validated configuration suitable for most tests """
    configuration = copy.deepcopy(DEFAULT_CONF)
    validate_config(configuration)
    return configuration


@pytest.fixture
def tiny_cfg():
    """ Encoder small enough for finite differences and fast smoke runs """
    return EncoderConfig(in_channels=3, window_length=16, num_classes=4, width=8, n_blocks=2,
                         embed_dim=5, stem_kernel_size=3)


def separable_windows(count: int, seed: int, subject: int, channels: int = 3, length: int = 16,
                      classes: int = 4):
    """ Class c oscillates at c + 1 cycles per window with a class dependent offset """
    generator = np.random.default_rng(seed)
    labels = np.arange(count) % classes
    time = np.arange(length) / length
    windows = np.empty((count, channels, length))
    for index, label in enumerate(labels):
        phase = generator.uniform(0, 2 * np.pi)
        for channel in range(channels):
            windows[index, channel] = (np.sin(2 * np.pi * (label + 1) * time + phase + channel)
                                       + 0.5 * label
                                       + 0.05 * generator.standard_normal(length))
    return windows, labels, np.full(count, subject)


@pytest.fixture
def tiny_split():
    """ Normalized (train, test) window sets matching tiny_cfg """
    train = make_window_set(*separable_windows(64, 1, subject=1), label_names=TINY_LABELS,
                            channel_groups=TINY_GROUPS, dataset_id='ucihar')
    test = make_window_set(*separable_windows(16, 2, subject=2), label_names=TINY_LABELS,
                           channel_groups=TINY_GROUPS, dataset_id='ucihar')
    return normalize_split(train, test)


def write_pamap2_subject(directory: str, subject: int, seed: int,
                         runs=((1, 300), (0, 40), (4, 300))) -> str:
    generator = np.random.default_rng(seed)
    rows = []
    time = 0.0
    for activity, length in runs:
        for _ in range(length):
            row = generator.standard_normal(COLUMN_COUNT)
            row[0] = time
            row[1] = activity
            rows.append(row)
            time += 0.01
    table = np.array(rows)
    # heart rate is sampled at a lower rate than the IMUs
    table[1::9, 2] = np.nan
    table[5, 10] = np.nan
    path = os.path.join(directory, 'subject{}.dat'.format(subject))
    np.savetxt(path, table, fmt='%.6f')
    return path


@pytest.fixture
def pamap2_root(tmp_path):
    protocol = tmp_path / 'Protocol'
    protocol.mkdir()
    for seed, subject in enumerate((101, 102, 105, 106)):
        write_pamap2_subject(str(protocol), subject, seed)
    return str(tmp_path)


def write_ucihar_split(root: str, split: str, count: int, seed: int, first_subject: int) -> None:
    generator = np.random.default_rng(seed)
    signals = os.path.join(root, split, 'Inertial Signals')
    os.makedirs(signals)
    for signal in SIGNALS:
        np.savetxt(os.path.join(signals, '{}_{}.txt'.format(signal, split)),
                   generator.standard_normal((count, 128)), fmt='%.6e')
    np.savetxt(os.path.join(root, split, 'y_{}.txt'.format(split)),
               (np.arange(count) % 6) + 1, fmt='%d')
    np.savetxt(os.path.join(root, split, 'subject_{}.txt'.format(split)),
               first_subject + (np.arange(count) % 2), fmt='%d')


@pytest.fixture
def ucihar_root(tmp_path):
    write_ucihar_split(str(tmp_path), 'train', 12, seed=0, first_subject=1)
    write_ucihar_split(str(tmp_path), 'test', 6, seed=1, first_subject=9)
    return str(tmp_path)


OPPORTUNITY_COLUMNS = 250


def write_opportunity_recording(path: str, seed: int,
                                runs=((406516, 200), (0, 30), (404516, 200))) -> None:
    generator = np.random.default_rng(seed)
    total = sum(length for _, length in runs)
    table = generator.standard_normal((total, OPPORTUNITY_COLUMNS))
    table[:, 0] = np.arange(total) * 33
    start = 0
    for code, length in runs:
        table[start:start + length, OPPORTUNITY_COLUMNS - 1] = code
        start += length
    table[10:14, 40] = np.nan
    np.savetxt(path, table, fmt='%.5f')


@pytest.fixture
def opportunity_root(tmp_path):
    for seed, name in enumerate(('S1-ADL1.dat', 'S2-Drill.dat', 'S4-ADL1.dat')):
        write_opportunity_recording(str(tmp_path / name), seed)
    return str(tmp_path)
