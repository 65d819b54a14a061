"""
Symbolic explanations: per-group sensor activations of a window, their
mapping to visual cues and the rendering of 24 annotated frames
"""
import glob
import json
import logging
import math
import os
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from PIL import Image, ImageDraw, ImageFont

from gexse.encoder import EncoderConfig, EncoderParams, encode, encoder_forward, stem_channel_energy
from gexse.misc import ConfigError, DataError, ShapeError, thread_count
from gexse.tensor import Tensor, backward

logger = logging.getLogger(__name__)

MANIFEST_SCHEMA_VERSION = 1
FRAME_COUNT = 24
FRAME_SIZE = (320, 240)
SALIENCY_MODES = ('gradient', 'energy')
IMAGE_PATTERNS = ('*.ppm', '*.png', '*.jpg', '*.jpeg', '*.bmp')

BACKGROUND_COLOR = (28, 30, 44)
TEXT_COLOR = (235, 235, 235)
HEART_COLOR = (214, 36, 58)
BAR_COLOR = (225, 30, 30)
ANNOTATION_ORIGIN = (6, 4)

LogitFn = Callable[[Tensor], Tensor]


class CueConstants(NamedTuple):
    """
    Constants of the activation to cue rules and the group routing
    """
    base_fps: float = 24.0
    speed_floor: float = 0.5
    speed_range: float = 1.5
    pulse_frames: int = FRAME_COUNT
    pulse_range: float = 3.0
    heart_min: float = 0.6
    heart_max: float = 1.0
    routing: Tuple[Tuple[str, str], ...] = (
        ('accelerometer', 'frame_rate'),
        ('heart_rate', 'pulse'),
        ('temperature', 'bar'),
    )

    def group_of(self, cue: str) -> str:
        return next(group for group, routed in self.routing if routed == cue)


class ActivationVector(NamedTuple):
    """
    levels: group -> activation in [0, 1]
    raw: group -> unnormalized mean saliency
    degenerate: True when every group scored the same and all levels are 0.5
    """
    levels: 'OrderedDict[str, float]'
    raw: 'OrderedDict[str, float]'
    degenerate: bool
    predicted_class: int
    activity: str
    window_index: Optional[int] = None


class FrameCue(NamedTuple):
    index: int
    display_duration_ms: float
    heart_scale: Optional[float] = None
    temp_fill: Optional[float] = None


class CueManifest(NamedTuple):
    activity: str
    frame_count: int
    base_fps: float
    cues: Tuple[str, ...]
    activations: ActivationVector
    frames: Tuple[FrameCue, ...]
    baseline: Optional[ActivationVector] = None


def channel_saliency(logit_fn: LogitFn, x: np.ndarray,
                     target: Optional[int] = None) -> Tuple[np.ndarray, int]:
    """
    Gradient × input saliency of one window
    :param logit_fn: differentiable map (B, C, T) -> (B, k)
    :param x: (C, T) window
    :param target: class to explain, defaults to the predicted class
    :return: (C,) mean over time of |d logit_target / dx ⊙ x|, and the predicted class
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError('Expected a (C, T) window, got {}'.format(x.shape))
    inputs = Tensor(x[None], requires_grad=True)
    logits = logit_fn(inputs)
    predicted = int(np.argmax(logits.data[0]))
    target = predicted if target is None else int(target)
    backward(logits[0, target])
    return np.mean(np.abs(inputs.grad_or_zero()[0] * x), axis=1), predicted


def group_scores(saliency: np.ndarray,
                 groups: Dict[str, Sequence[int]]) -> 'OrderedDict[str, float]':
    return OrderedDict((name, float(np.mean(saliency[list(members)])))
                       for name, members in groups.items())


def normalize_scores(raw: Dict[str, float]) -> Tuple['OrderedDict[str, float]', bool]:
    """
    Min-max normalization across groups; equal scores map to 0.5
    :return: (levels, degenerate)
    """
    values = np.array(list(raw.values()), dtype=np.float64)
    low, high = values.min(), values.max()
    if high - low <= 1e-12 * max(1.0, abs(high)):
        logger.warning('All %d group scores are equal, activations set to 0.5', len(values))
        return OrderedDict((name, 0.5) for name in raw), True
    return OrderedDict((name, float((value - low) / (high - low)))
                       for name, value in raw.items()), False


def encoder_logit_fn(params: EncoderParams, cfg: EncoderConfig) -> LogitFn:
    def logit_fn(x: Tensor) -> Tensor:
        return encoder_forward(x, params, cfg, training=False)[0]
    return logit_fn


def activations_from_logits(logit_fn: LogitFn, x: np.ndarray, groups: Dict[str, Sequence[int]],
                            label_names: Sequence[str], target: Optional[int] = None,
                            window_index: Optional[int] = None) -> ActivationVector:
    """ Gradient × input activations of any differentiable classifier """
    saliency, predicted = channel_saliency(logit_fn, x, target)
    raw = group_scores(saliency, groups)
    levels, degenerate = normalize_scores(raw)
    return ActivationVector(levels, raw, degenerate, predicted, label_names[predicted],
                            window_index)


def quantify_activations(x: np.ndarray, params: EncoderParams, cfg: EncoderConfig,
                         groups: Dict[str, Sequence[int]], label_names: Sequence[str],
                         saliency: str = 'gradient',
                         window_index: Optional[int] = None) -> ActivationVector:
    """
    Per-group activation levels of one window for the encoder's predicted class
    :param x: (C, T) normalized window
    :param groups: channel groups of the window set
    :param label_names: class names
    :param saliency: 'gradient' (gradient × input) or 'energy' (stem output energy)
    :return: ActivationVector
    """
    if saliency == 'gradient':
        return activations_from_logits(encoder_logit_fn(params, cfg), x, groups, label_names,
                                       window_index=window_index)
    if saliency != 'energy':
        raise ConfigError('Unknown saliency mode {}, use one of {}'.format(
            saliency, ', '.join(SALIENCY_MODES)))
    logits, _ = encode(params, cfg, np.asarray(x)[None])
    predicted = int(np.argmax(logits[0]))
    raw = group_scores(stem_channel_energy(params, cfg, x), groups)
    levels, degenerate = normalize_scores(raw)
    return ActivationVector(levels, raw, degenerate, predicted, label_names[predicted],
                            window_index)


def baseline_activations(windows: np.ndarray, params: EncoderParams, cfg: EncoderConfig,
                         groups: Dict[str, Sequence[int]], label_names: Sequence[str],
                         class_index: int, saliency: str = 'gradient') -> ActivationVector:
    """
    Mean raw group scores over windows of one class, normalized like a single window
    :param windows: (W, C, T) windows labeled class_index
    """
    if len(windows) == 0:
        raise DataError('No windows of class {} for a baseline'.format(label_names[class_index]))
    totals = OrderedDict((name, 0.0) for name in groups)
    logit_fn = encoder_logit_fn(params, cfg)
    for window in windows:
        if saliency == 'energy':
            raw = group_scores(stem_channel_energy(params, cfg, window), groups)
        else:
            raw = group_scores(channel_saliency(logit_fn, window, class_index)[0], groups)
        for name, value in raw.items():
            totals[name] += value
    raw = OrderedDict((name, value / len(windows)) for name, value in totals.items())
    levels, degenerate = normalize_scores(raw)
    return ActivationVector(levels, raw, degenerate, class_index, label_names[class_index])


def map_cues(a: ActivationVector, constants: CueConstants = CueConstants(),
             baseline: Optional[ActivationVector] = None) -> CueManifest:
    """
    Deterministic cue rules:
    frame duration (1000 / base_fps) / (floor + range · a_acc) ms,
    heart pulse period round(pulse_frames / (1 + pulse_range · a_hr)) frames with a
    sinusoidal scale between heart_min and heart_max, red bar fill a_temp.
    Cues of absent groups are omitted.
    """
    if constants.base_fps <= 0:
        raise ConfigError('base_fps must be positive, got {}'.format(constants.base_fps))
    cues = tuple(cue for group, cue in constants.routing if group in a.levels)
    base_duration = 1000.0 / constants.base_fps

    duration = base_duration
    if 'frame_rate' in cues:
        level = a.levels[constants.group_of('frame_rate')]
        duration = base_duration / (constants.speed_floor + constants.speed_range * level)

    period = None
    if 'pulse' in cues:
        period = pulse_period(a.levels[constants.group_of('pulse')], constants)
    middle = (constants.heart_max + constants.heart_min) / 2.0
    swing = (constants.heart_max - constants.heart_min) / 2.0

    fill = a.levels[constants.group_of('bar')] if 'bar' in cues else None
    frames = tuple(
        FrameCue(
            index=index,
            display_duration_ms=duration,
            heart_scale=None if period is None
            else middle + swing * math.cos(2.0 * math.pi * index / period),
            temp_fill=fill,
        )
        for index in range(FRAME_COUNT)
    )
    return CueManifest(activity=a.activity, frame_count=FRAME_COUNT,
                       base_fps=constants.base_fps, cues=cues, activations=a,
                       frames=frames, baseline=baseline)


def pulse_period(level: float, constants: CueConstants = CueConstants()) -> int:
    """ Frames per heart beat, half-up rounded """
    return max(1, int(math.floor(constants.pulse_frames
                                 / (1.0 + constants.pulse_range * level) + 0.5)))


def manifest_to_json(manifest: CueManifest) -> Dict:
    """ Versioned JSON form of a manifest """
    a = manifest.activations
    frames = []
    for frame in manifest.frames:
        record = OrderedDict([('index', frame.index),
                              ('display_duration_ms', frame.display_duration_ms)])
        if frame.heart_scale is not None:
            record['heart_scale'] = frame.heart_scale
        if frame.temp_fill is not None:
            record['temp_fill'] = frame.temp_fill
        frames.append(record)
    baseline = None
    if manifest.baseline is not None:
        baseline = {'levels': dict(manifest.baseline.levels),
                    'raw': dict(manifest.baseline.raw),
                    'degenerate': manifest.baseline.degenerate}
    return OrderedDict([
        ('schema_version', MANIFEST_SCHEMA_VERSION),
        ('activity', manifest.activity),
        ('frame_count', manifest.frame_count),
        ('base_fps', manifest.base_fps),
        ('cues', list(manifest.cues)),
        ('activations', {
            'levels': dict(a.levels),
            'raw': dict(a.raw),
            'degenerate': a.degenerate,
            'window_index': a.window_index,
            'predicted_class': a.predicted_class,
        }),
        ('baseline', baseline),
        ('frames', frames),
    ])


def frame_name(index: int) -> str:
    return 'frame_{:02d}.ppm'.format(index)


def bar_box(size: Tuple[int, int], min_top: int = 0) -> Tuple[int, int, int, int]:
    """
    (left, top, right, bottom) of the temperature bar, bottom-left corner
    :param min_top: first row the bar may use, below the annotation text
    """
    width, height = size
    return (10, max(height // 2, min_top), 10 + max(8, width // 20), height - 10)


def heart_anchor(size: Tuple[int, int]) -> Tuple[int, int, int]:
    """ Center and full-scale radius of the heart icon, top-right corner """
    width, height = size
    radius = max(6, min(width, height) // 10)
    return width - radius - 10, radius + 10, radius


def placeholder_background(activity: str, size: Tuple[int, int] = FRAME_SIZE) -> Image.Image:
    """ Plain background with the activity name """
    image = Image.new('RGB', size, BACKGROUND_COLOR)
    draw = ImageDraw.Draw(image)
    draw.text((size[0] // 3, size[1] // 2), activity, fill=TEXT_COLOR,
              font=ImageFont.load_default())
    return image


def load_base_frames(directory: str) -> List[str]:
    """
    Sorted image files of a base-frame directory, at least FRAME_COUNT of them
    """
    if not os.path.isdir(directory):
        raise DataError('Base frame directory {} does not exist'.format(directory))
    paths = sorted({path for pattern in IMAGE_PATTERNS
                    for path in glob.glob(os.path.join(directory, pattern))})
    if len(paths) < FRAME_COUNT:
        raise DataError('{} holds {} base frames, {} are needed'.format(
            directory, len(paths), FRAME_COUNT))
    return paths[:FRAME_COUNT]


def _open_frame(path: str) -> Image.Image:
    try:
        with Image.open(path) as image:
            return image.convert('RGB')
    except OSError as error:
        raise DataError('Unreadable base frame {}: {}'.format(path, error))


def _heart_polygon(center_x: int, center_y: int, radius: float) -> List[Tuple[float, float]]:
    points = []
    for step in range(64):
        t = 2.0 * math.pi * step / 64
        x = 16.0 * math.sin(t) ** 3
        y = 13.0 * math.cos(t) - 5.0 * math.cos(2 * t) - 2.0 * math.cos(3 * t) - math.cos(4 * t)
        points.append((center_x + radius * x / 17.0, center_y - radius * y / 17.0))
    return points


def annotation_text(manifest: CueManifest) -> str:
    return '\n'.join('{} {:.2f}'.format(name, level)
                     for name, level in manifest.activations.levels.items())


def draw_frame(background: Image.Image, manifest: CueManifest, frame: FrameCue) -> Image.Image:
    """ Background with activation annotations, heart icon and temperature bar """
    image = background.copy()
    draw = ImageDraw.Draw(image)
    font = ImageFont.load_default()
    text = annotation_text(manifest)
    draw.multiline_text(ANNOTATION_ORIGIN, text, fill=TEXT_COLOR, font=font)
    text_bottom = draw.multiline_textbbox(ANNOTATION_ORIGIN, text, font=font)[3]

    if frame.heart_scale is not None:
        center_x, center_y, radius = heart_anchor(image.size)
        draw.polygon(_heart_polygon(center_x, center_y, radius * frame.heart_scale),
                     fill=HEART_COLOR)

    if frame.temp_fill is not None:
        left, top, right, bottom = bar_box(image.size, min_top=text_bottom + 4)
        filled = int(round(max(0, bottom - top) * frame.temp_fill))
        if filled > 0:
            draw.rectangle((left, bottom - filled, right - 1, bottom - 1), fill=BAR_COLOR)
    return image


def render_frames(manifest: CueManifest, base_frames: Optional[str], out: str,
                  size: Tuple[int, int] = FRAME_SIZE) -> List[str]:
    """
    Writes frame_00.ppm .. frame_23.ppm (binary PPM) and manifest.json
    :param manifest: cue manifest
    :param base_frames: directory of at least 24 equally sized images, None for placeholders
    :param out: output directory
    :param size: placeholder frame size
    :return: paths of the written frames
    """
    if base_frames:
        paths = load_base_frames(base_frames)
        backgrounds = [_open_frame(path) for path in paths]
        sizes = {image.size for image in backgrounds}
        if len(sizes) != 1:
            raise DataError('Base frames in {} differ in size: {}'.format(
                base_frames, sorted(sizes)))
    else:
        placeholder = placeholder_background(manifest.activity, size)
        backgrounds = [placeholder] * manifest.frame_count
    os.makedirs(out, exist_ok=True)

    def write(frame: FrameCue) -> str:
        path = os.path.join(out, frame_name(frame.index))
        draw_frame(backgrounds[frame.index], manifest, frame).save(path, format='PPM')
        return path

    with ThreadPoolExecutor(max_workers=thread_count()) as pool:
        written = list(pool.map(write, manifest.frames))
    with open(os.path.join(out, 'manifest.json'), 'w') as file:
        json.dump(manifest_to_json(manifest), file, indent=2)
    logger.info('Rendered %d frames of %s to %s', len(written), manifest.activity, out)
    return written
