# pragma pylint: disable=missing-docstring
from collections import OrderedDict

import numpy as np
import pytest

from gexse.misc import DataError
from gexse.persistence import (
    CACHE_MAGIC, CHECKPOINT_MAGIC, DIFFUSION_MAGIC, read_cache, read_tensors, write_cache,
    write_tensors
)


def test_tensor_container(tmp_path, rng):
    path = str(tmp_path / 'model.ckpt')
    tensors = OrderedDict([('a.w', rng.standard_normal((3, 2, 1))), ('scalar', np.array(2.5))])
    write_tensors(path, CHECKPOINT_MAGIC, {'epoch': 3}, tensors)
    meta, loaded = read_tensors(path, CHECKPOINT_MAGIC)
    assert meta == {'epoch': 3}
    assert list(loaded) == ['a.w', 'scalar']
    np.testing.assert_array_equal(loaded['a.w'], tensors['a.w'])
    assert loaded['scalar'].shape == ()


def test_tensor_container_wrong_magic(tmp_path):
    path = str(tmp_path / 'model.ckpt')
    write_tensors(path, DIFFUSION_MAGIC, {}, {})
    with pytest.raises(DataError, match='is not a GEXSE01 file'):
        read_tensors(path, CHECKPOINT_MAGIC)


def test_tensor_container_version_mismatch(tmp_path):
    path = str(tmp_path / 'model.ckpt')
    write_tensors(path, b'GEXSE02', {}, {})
    with pytest.raises(DataError, match='has version 02, expected 01'):
        read_tensors(path, CHECKPOINT_MAGIC)


def test_tensor_container_corruption(tmp_path):
    path = tmp_path / 'model.ckpt'
    write_tensors(str(path), CHECKPOINT_MAGIC, {'a': 1}, {'w': np.ones(4)})
    payload = bytearray(path.read_bytes())
    payload[-10] ^= 0xff
    path.write_bytes(bytes(payload))
    with pytest.raises(DataError, match='checksum'):
        read_tensors(str(path), CHECKPOINT_MAGIC)

    path.write_bytes(bytes(payload[:20]))
    with pytest.raises(DataError, match='truncated'):
        read_tensors(str(path), CHECKPOINT_MAGIC)


def test_cache_is_bit_exact(tmp_path, tiny_split):
    train, _ = tiny_split
    path = str(tmp_path / 'train.gxws')
    write_cache(train, path)
    loaded = read_cache(path)
    np.testing.assert_array_equal(loaded.windows, train.windows)
    np.testing.assert_array_equal(loaded.labels, train.labels)
    np.testing.assert_array_equal(loaded.subjects, train.subjects)
    np.testing.assert_array_equal(loaded.norm_stats.mean, train.norm_stats.mean)
    assert loaded.label_names == train.label_names
    assert loaded.channel_groups == train.channel_groups
    assert list(loaded.channel_groups) == list(train.channel_groups)
    assert loaded.dataset_id == 'ucihar'


def test_cache_rewrite_is_byte_identical(tmp_path, tiny_split):
    train, _ = tiny_split
    first, second = tmp_path / 'a.gxws', tmp_path / 'b.gxws'
    write_cache(train, str(first))
    write_cache(read_cache(str(first)), str(second))
    assert first.read_bytes() == second.read_bytes()
    assert first.read_bytes()[:len(CACHE_MAGIC)] == CACHE_MAGIC


def test_cache_without_statistics(tmp_path, tiny_split):
    train, _ = tiny_split
    raw = train._replace(norm_stats=None)
    path = str(tmp_path / 'raw.gxws')
    write_cache(raw, path)
    assert read_cache(path).norm_stats is None


def test_cache_truncated(tmp_path, tiny_split):
    path = tmp_path / 'train.gxws'
    write_cache(tiny_split[0], str(path))
    path.write_bytes(path.read_bytes()[:-100])
    with pytest.raises(DataError):
        read_cache(str(path))


def test_cache_checksum_flip(tmp_path, tiny_split):
    path = tmp_path / 'train.gxws'
    write_cache(tiny_split[0], str(path))
    payload = bytearray(path.read_bytes())
    # last byte of the window block, just before the CRC trailer
    payload[-5] ^= 0x01
    path.write_bytes(bytes(payload))
    with pytest.raises(DataError, match='checksum'):
        read_cache(str(path))


def test_missing_file(tmp_path):
    with pytest.raises(DataError, match='Unable to read'):
        read_cache(str(tmp_path / 'nope.gxws'))
