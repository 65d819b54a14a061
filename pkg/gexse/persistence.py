"""
Binary containers of gexse: tagged tensor files and window caches.

Tensor container (little-endian):
    magic (7 bytes) | uint32 meta length | JSON meta | uint32 tensor count |
    per tensor: uint16 name length | name | uint8 ndim | ndim × uint32 dims | float64 data |
    uint32 CRC-32 of all preceding bytes

Window cache (little-endian):
    'GXWS01' | uint32 C, T, W, k | uint32 meta length | JSON meta |
    W × int64 labels | W × int64 subjects | uint8 stats flag
    [| C × float64 mean | C × float64 std] |
    W·C·T × float64 windows | uint32 CRC-32
"""
import json
import logging
import os
import struct
import zlib
from collections import OrderedDict
from typing import Dict, Mapping, Tuple

import numpy as np

from gexse.data.windows import NormStats, WindowSet, make_window_set
from gexse.misc import DataError

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b'GEXSE01'
OPTIMIZER_MAGIC = b'GXOPT01'
DIFFUSION_MAGIC = b'GXDIF01'
CACHE_MAGIC = b'GXWS01'


class _Reader:
    """ Bounds-checked cursor over the bytes of a container """

    def __init__(self, payload: bytes, path: str) -> None:
        self.payload = payload
        self.path = path
        self.offset = 0

    def take(self, size: int) -> bytes:
        end = self.offset + size
        if size < 0 or end > len(self.payload):
            raise DataError('{} is truncated'.format(self.path))
        chunk = self.payload[self.offset:end]
        self.offset = end
        return chunk

    def unpack(self, fmt: str) -> Tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def array(self, dtype: str, count: int) -> np.ndarray:
        itemsize = np.dtype(dtype).itemsize
        return np.frombuffer(self.take(itemsize * count), dtype=dtype).copy()

    def json(self) -> Dict:
        size, = self.unpack('<I')
        try:
            return json.loads(self.take(size).decode('utf-8'))
        except (UnicodeDecodeError, ValueError):
            raise DataError('{} has a corrupted header'.format(self.path))


def _json_bytes(meta: Mapping) -> bytes:
    encoded = json.dumps(meta, sort_keys=True, separators=(',', ':')).encode('utf-8')
    return struct.pack('<I', len(encoded)) + encoded


def _write_atomic(path: str, body: bytes) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    payload = body + struct.pack('<I', zlib.crc32(body) & 0xffffffff)
    temporary = path + '.tmp'
    with open(temporary, 'wb') as file:
        file.write(payload)
    os.replace(temporary, path)


def _open(path: str, magic: bytes) -> _Reader:
    try:
        with open(path, 'rb') as file:
            payload = file.read()
    except OSError as error:
        raise DataError('Unable to read {}: {}'.format(path, error))
    head = payload[:len(magic)]
    if head != magic:
        if head[:-2] == magic[:-2] and len(head) == len(magic):
            raise DataError('{} has version {}, expected {}'.format(
                path, head[-2:].decode('ascii', 'replace'), magic[-2:].decode('ascii')))
        raise DataError('{} is not a {} file'.format(path, magic.decode('ascii')))
    return _Reader(payload, path)


def _verify_checksum(reader: _Reader) -> None:
    body_end = reader.offset
    stored, = reader.unpack('<I')
    if reader.offset != len(reader.payload):
        raise DataError('{} has trailing bytes'.format(reader.path))
    if zlib.crc32(reader.payload[:body_end]) & 0xffffffff != stored:
        raise DataError('{} failed its checksum'.format(reader.path))


def write_tensors(path: str, magic: bytes, meta: Mapping,
                  tensors: Mapping[str, np.ndarray]) -> None:
    """
    Writes named float64 arrays and a JSON meta block
    :param path: destination file
    :param magic: 7-byte file tag
    :param meta: JSON-serializable header
    :param tensors: ordered name -> array
    :return: None
    """
    parts = [magic, _json_bytes(meta), struct.pack('<I', len(tensors))]
    for name, value in tensors.items():
        value = np.asarray(value, dtype='<f8')
        encoded = name.encode('utf-8')
        parts.append(struct.pack('<H', len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack('<B', value.ndim))
        parts.append(struct.pack('<{}I'.format(value.ndim), *value.shape))
        parts.append(value.tobytes(order='C'))
    _write_atomic(path, b''.join(parts))
    logger.debug('Wrote %d tensors to %s', len(tensors), path)


def read_tensors(path: str, magic: bytes) -> Tuple[Dict, 'OrderedDict[str, np.ndarray]']:
    """
    Reads a file written by write_tensors
    :return: (meta, ordered name -> array)
    """
    reader = _open(path, magic)
    reader.take(len(magic))
    meta = reader.json()
    count, = reader.unpack('<I')
    tensors: 'OrderedDict[str, np.ndarray]' = OrderedDict()
    for _ in range(count):
        name_length, = reader.unpack('<H')
        try:
            name = reader.take(name_length).decode('utf-8')
        except UnicodeDecodeError:
            raise DataError('{} has a corrupted tensor name'.format(path))
        ndim, = reader.unpack('<B')
        shape = reader.unpack('<{}I'.format(ndim))
        tensors[name] = reader.array('<f8', int(np.prod(shape))).reshape(shape)
    _verify_checksum(reader)
    return meta, tensors


def write_cache(ws: WindowSet, path: str) -> None:
    """
    Writes a WindowSet cache, reruns on equal input produce equal bytes
    """
    meta = {
        'dataset_id': ws.dataset_id,
        'label_names': list(ws.label_names),
        'channel_groups': [[name, list(members)] for name, members in ws.channel_groups.items()],
    }
    parts = [
        CACHE_MAGIC,
        struct.pack('<4I', ws.channels, ws.length, ws.num_windows, ws.num_classes),
        _json_bytes(meta),
        np.asarray(ws.labels, dtype='<i8').tobytes(),
        np.asarray(ws.subjects, dtype='<i8').tobytes(),
    ]
    if ws.norm_stats is None:
        parts.append(struct.pack('<B', 0))
    else:
        parts.append(struct.pack('<B', 1))
        parts.append(np.asarray(ws.norm_stats.mean, dtype='<f8').tobytes())
        parts.append(np.asarray(ws.norm_stats.std, dtype='<f8').tobytes())
    parts.append(np.asarray(ws.windows, dtype='<f8').tobytes(order='C'))
    _write_atomic(path, b''.join(parts))
    logger.info('Cached %d windows of %s to %s', ws.num_windows, ws.dataset_id, path)


def read_cache(path: str) -> WindowSet:
    """
    Reads a WindowSet cache bit-exactly
    """
    reader = _open(path, CACHE_MAGIC)
    reader.take(len(CACHE_MAGIC))
    channels, length, count, classes = reader.unpack('<4I')
    meta = reader.json()
    labels = reader.array('<i8', count)
    subjects = reader.array('<i8', count)
    has_stats, = reader.unpack('<B')
    stats = None
    if has_stats:
        stats = NormStats(mean=reader.array('<f8', channels), std=reader.array('<f8', channels))
    windows = reader.array('<f8', count * channels * length).reshape(count, channels, length)
    _verify_checksum(reader)

    try:
        label_names = meta['label_names']
        groups = OrderedDict((name, members) for name, members in meta['channel_groups'])
        dataset_id = meta['dataset_id']
    except (KeyError, TypeError, ValueError):
        raise DataError('{} has an incomplete header'.format(path))
    if len(label_names) != classes:
        raise DataError('{} declares {} classes but names {}'.format(
            path, classes, len(label_names)))
    return make_window_set(windows, labels, subjects, label_names, groups, dataset_id, stats)
