# pragma pylint: disable=missing-docstring,C0103
import json
import os
from collections import OrderedDict

import numpy as np
import pytest
from PIL import Image, ImageDraw, ImageFont

from gexse.encoder import init_params
from gexse.explain import (
    ANNOTATION_ORIGIN, BAR_COLOR, FRAME_COUNT, ActivationVector, CueConstants,
    activations_from_logits, annotation_text, bar_box, baseline_activations, channel_saliency,
    draw_frame, manifest_to_json, map_cues, normalize_scores, placeholder_background,
    pulse_period, quantify_activations, render_frames
)
from gexse.misc import ConfigError, DataError
from gexse.tensor import Tensor, affine
from gexse.tests.conftest import TINY_GROUPS, TINY_LABELS

VITAL_GROUPS = ('accelerometer', 'heart_rate', 'temperature')


def vector(level, groups=VITAL_GROUPS):
    levels = OrderedDict((name, level) for name in groups)
    return ActivationVector(levels, OrderedDict(levels), False, 0, 'Walking')


def linear_logits(weights):
    w, b = Tensor(weights), Tensor(np.zeros(weights.shape[1]))

    def logit_fn(x):
        return affine(x.reshape(x.shape[0], -1), w, b)
    return logit_fn


def test_saliency_of_linear_model(rng):
    weights = rng.standard_normal((3 * 4, 2))
    x = rng.standard_normal((3, 4))
    saliency, predicted = channel_saliency(linear_logits(weights), x, target=1)
    expected = np.mean(np.abs(weights[:, 1].reshape(3, 4) * x), axis=1)
    np.testing.assert_allclose(saliency, expected)
    assert predicted == int(np.argmax(x.reshape(-1) @ weights))


def test_doubling_group_input_raises_its_score(rng):
    weights = rng.standard_normal((3 * 8, 4))
    x = rng.standard_normal((3, 8))
    logit_fn = linear_logits(weights)
    before = activations_from_logits(logit_fn, x, TINY_GROUPS, TINY_LABELS, target=0)
    doubled = x.copy()
    doubled[list(TINY_GROUPS['gyroscope'])] *= 2.0
    after = activations_from_logits(logit_fn, doubled, TINY_GROUPS, TINY_LABELS, target=0)
    assert after.raw['gyroscope'] == pytest.approx(2.0 * before.raw['gyroscope'])
    assert after.raw['accelerometer'] == pytest.approx(before.raw['accelerometer'])


def test_single_group_is_degenerate():
    levels, degenerate = normalize_scores({'accelerometer': 3.0})
    assert degenerate
    assert levels == {'accelerometer': 0.5}


def test_min_max_levels():
    levels, degenerate = normalize_scores(OrderedDict([('a', 1.0), ('b', 3.0), ('c', 2.0)]))
    assert not degenerate
    assert list(levels.values()) == [0.0, 1.0, 0.5]


def test_zero_window_is_degenerate(tiny_cfg):
    params = init_params(tiny_cfg, 0)
    a = quantify_activations(np.zeros((3, 16)), params, tiny_cfg, TINY_GROUPS, TINY_LABELS)
    assert a.degenerate
    assert set(a.levels.values()) == {0.5}
    assert list(a.levels) == list(TINY_GROUPS)


def test_quantify_activations_levels(tiny_cfg, tiny_split):
    params = init_params(tiny_cfg, 0)
    window = tiny_split[0].windows[0]
    for mode in ('gradient', 'energy'):
        a = quantify_activations(window, params, tiny_cfg, TINY_GROUPS, TINY_LABELS,
                                 saliency=mode, window_index=0)
        assert all(0.0 <= level <= 1.0 for level in a.levels.values())
        assert a.activity == TINY_LABELS[a.predicted_class]
        assert a.window_index == 0
    with pytest.raises(ConfigError):
        quantify_activations(window, params, tiny_cfg, TINY_GROUPS, TINY_LABELS, saliency='lrp')


def test_baseline_activations(tiny_cfg, tiny_split):
    params = init_params(tiny_cfg, 0)
    train = tiny_split[0]
    windows = train.windows[train.labels == 2]
    baseline = baseline_activations(windows, params, tiny_cfg, TINY_GROUPS, TINY_LABELS, 2)
    assert baseline.activity == TINY_LABELS[2]
    assert all(0.0 <= level <= 1.0 for level in baseline.levels.values())
    with pytest.raises(DataError):
        baseline_activations(windows[:0], params, tiny_cfg, TINY_GROUPS, TINY_LABELS, 2)


def test_cues_at_lower_bound():
    manifest = map_cues(vector(0.0), CueConstants(base_fps=24.0))
    assert manifest.frame_count == FRAME_COUNT == len(manifest.frames)
    assert manifest.frames[0].display_duration_ms == pytest.approx(2000.0 / 24.0)
    assert pulse_period(0.0) == 24
    assert manifest.frames[5].temp_fill == 0.0
    assert manifest.frames[0].heart_scale == pytest.approx(1.0)


def test_cues_at_upper_bound():
    manifest = map_cues(vector(1.0), CueConstants(base_fps=30.0))
    assert manifest.frames[0].display_duration_ms == pytest.approx(500.0 / 30.0)
    assert pulse_period(1.0) == 6
    assert manifest.frames[0].temp_fill == 1.0
    # half a pulse period later the heart is at its smallest
    assert manifest.frames[3].heart_scale == pytest.approx(0.6)


def test_cues_half_acceleration():
    manifest = map_cues(vector(0.5))
    base = 1000.0 / 24.0
    assert manifest.frames[0].display_duration_ms == pytest.approx(base / 1.25)


def test_cues_are_monotone():
    levels = np.linspace(0.0, 1.0, 101)
    manifests = [map_cues(vector(level)) for level in levels]
    fps = [1000.0 / manifest.frames[0].display_duration_ms for manifest in manifests]
    periods = [pulse_period(level) for level in levels]
    fills = [manifest.frames[0].temp_fill for manifest in manifests]
    pulses = [FRAME_COUNT / period for period in periods]
    assert all(a < b for a, b in zip(fps, fps[1:]))
    assert all(a >= b for a, b in zip(periods, periods[1:]))
    assert all(a <= b for a, b in zip(pulses, pulses[1:]))
    assert all(a < b for a, b in zip(fills, fills[1:]))
    assert periods[0] > periods[-1]


def test_heart_scale_range():
    for level in (0.0, 0.3, 0.7, 1.0):
        scales = [frame.heart_scale for frame in map_cues(vector(level)).frames]
        assert min(scales) >= 0.6 - 1e-12 and max(scales) <= 1.0 + 1e-12


def test_absent_groups_omit_cues():
    manifest = map_cues(vector(0.3, groups=('accelerometer', 'gyroscope')))
    assert manifest.cues == ('frame_rate',)
    assert all(frame.heart_scale is None and frame.temp_fill is None
               for frame in manifest.frames)
    record = manifest_to_json(manifest)['frames'][0]
    assert 'heart_scale' not in record and 'temp_fill' not in record


def test_baseline_reproduction():
    baseline = vector(0.4)
    assert map_cues(vector(0.4)) == map_cues(baseline)
    assert map_cues(baseline, baseline=baseline).baseline is baseline


def test_render_frames(tmp_path):
    manifest = map_cues(vector(0.6))
    written = render_frames(manifest, None, str(tmp_path / 'out'))
    assert [os.path.basename(path) for path in written] == \
        ['frame_{:02d}.ppm'.format(i) for i in range(24)]
    with open(written[0], 'rb') as file:
        assert file.read(2) == b'P6'
    with open(str(tmp_path / 'out' / 'manifest.json')) as file:
        stored = json.load(file)
    assert stored['schema_version'] == 1
    assert stored['frame_count'] == 24
    assert stored['cues'] == ['frame_rate', 'pulse', 'bar']
    assert len(stored['frames']) == 24


def test_render_is_deterministic(tmp_path):
    manifest = map_cues(vector(0.25))
    first = render_frames(manifest, None, str(tmp_path / 'a'))
    second = render_frames(manifest, None, str(tmp_path / 'b'))
    for left, right in zip(first, second):
        with open(left, 'rb') as a, open(right, 'rb') as b:
            assert a.read() == b.read()


def test_empty_bar_keeps_background(tmp_path):
    manifest = map_cues(vector(0.0))
    written = render_frames(manifest, None, str(tmp_path))
    background = np.asarray(placeholder_background(manifest.activity))
    left, top, right, bottom = bar_box(background.shape[1::-1])
    with Image.open(written[7]) as image:
        frame = np.asarray(image)
    np.testing.assert_array_equal(frame[top:bottom, left:right], background[top:bottom, left:right])

    full = render_frames(map_cues(vector(1.0)), None, str(tmp_path / 'full'))
    with Image.open(full[7]) as image:
        assert np.any(np.asarray(image)[top:bottom, left:right]
                      != background[top:bottom, left:right])


def test_bar_stays_below_annotation():
    manifest = map_cues(vector(1.0))
    measure = ImageDraw.Draw(Image.new('RGB', (200, 200)))
    text_bottom = measure.multiline_textbbox(ANNOTATION_ORIGIN, annotation_text(manifest),
                                             font=ImageFont.load_default())[3]
    # half the frame height lies inside the annotation block
    size = (60, 2 * text_bottom)
    assert bar_box(size)[1] <= text_bottom
    frame = np.asarray(draw_frame(Image.new('RGB', size, (0, 0, 0)), manifest,
                                  manifest.frames[0]))
    rows = np.nonzero(np.all(frame == BAR_COLOR, axis=2))[0]
    assert len(rows)
    assert rows.min() > text_bottom
    assert bar_box((320, 240), min_top=text_bottom + 4)[1] == 120


def test_render_with_base_frames(tmp_path):
    base = tmp_path / 'base'
    base.mkdir()
    for index in range(24):
        Image.new('RGB', (64, 48), (index * 10, 0, 0)).save(str(base / 'b{:02d}.png'.format(index)))
    written = render_frames(map_cues(vector(0.5)), str(base), str(tmp_path / 'out'))
    with Image.open(written[0]) as image:
        assert image.size == (64, 48)


def test_render_base_frame_errors(tmp_path):
    base = tmp_path / 'base'
    base.mkdir()
    for index in range(23):
        Image.new('RGB', (64, 48)).save(str(base / 'b{:02d}.png'.format(index)))
    with pytest.raises(DataError, match='23 base frames'):
        render_frames(map_cues(vector(0.5)), str(base), str(tmp_path / 'out'))

    Image.new('RGB', (32, 48)).save(str(base / 'b23.png'))
    with pytest.raises(DataError, match='differ in size'):
        render_frames(map_cues(vector(0.5)), str(base), str(tmp_path / 'out'))

    (base / 'a_bad.ppm').write_bytes(b'not an image')
    with pytest.raises(DataError, match='Unreadable'):
        render_frames(map_cues(vector(0.5)), str(base), str(tmp_path / 'out'))
