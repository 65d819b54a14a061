"""
Multi-task FFC encoder: stem FFC, PMB-MLP-FFC blocks, classification and
embedding heads
"""
import logging
from collections import OrderedDict
from typing import Dict, NamedTuple, Optional, Tuple

import numpy as np

from gexse.misc import ConfigError, DataError, ShapeError, make_rng
from gexse.persistence import CHECKPOINT_MAGIC, read_tensors, write_tensors
from gexse.tensor import (
    ComplexSpectrum, NormState, Tensor, affine, batch_norm1d, concat_channels, conv1d, gelu,
    global_avg_pool, inverse_real_fft, no_grad, real_fft, relu, split_channels
)
from gexse.tensor.tree import count_parameters, load_state_arrays, state_arrays

logger = logging.getLogger(__name__)


class EncoderConfig(NamedTuple):
    in_channels: int
    window_length: int
    num_classes: int
    width: int = 128
    n_blocks: int = 2
    embed_dim: int = 64
    stem_kernel_size: int = 9
    branch_kernel_sizes: Tuple[int, ...] = (1, 3, 5)
    head_kernel_size: int = 3


DEFAULT_CONFIGS = {
    'ucihar': EncoderConfig(in_channels=9, window_length=128, num_classes=6, width=64),
    'pamap2': EncoderConfig(in_channels=36, window_length=256, num_classes=12, width=128),
    'opportunity': EncoderConfig(in_channels=77, window_length=90, num_classes=17, width=128),
}


def validate_encoder_config(cfg: EncoderConfig) -> EncoderConfig:
    if cfg.width < 4 or cfg.width % 4:
        raise ConfigError('Model width must be a positive multiple of 4, got {}'.format(cfg.width))
    if cfg.n_blocks < 1:
        raise ConfigError('At least one PMB block is required, got {}'.format(cfg.n_blocks))
    if cfg.window_length < 2 or cfg.in_channels < 1:
        raise ConfigError('Invalid input shape ({}, {})'.format(cfg.in_channels, cfg.window_length))
    if cfg.num_classes < 2 or cfg.embed_dim < 1:
        raise ConfigError('Invalid head sizes k={} N={}'.format(cfg.num_classes, cfg.embed_dim))
    for size in (cfg.stem_kernel_size, cfg.head_kernel_size) + tuple(cfg.branch_kernel_sizes):
        if size < 1 or size % 2 == 0:
            raise ConfigError('FFC kernel sizes must be odd, got {}'.format(size))
    return cfg


def config_for(dataset_id: str, conf: Dict, in_channels: Optional[int] = None) -> EncoderConfig:
    """
    Encoder configuration of a dataset with the overrides of a run configuration
    :param dataset_id: pamap2, ucihar or opportunity
    :param conf: run configuration
    :param in_channels: channel count of the cached windows, when it differs from the default
    :return: EncoderConfig
    """
    try:
        cfg = DEFAULT_CONFIGS[dataset_id]
    except KeyError:
        raise ConfigError('Dataset {} is not supported'.format(dataset_id))
    section = conf.get('encoder', {})
    cfg = cfg._replace(
        width=section.get('width') or cfg.width,
        n_blocks=section.get('n_blocks', cfg.n_blocks),
        stem_kernel_size=section.get('stem_kernel_size', cfg.stem_kernel_size),
        head_kernel_size=section.get('head_kernel_size', cfg.head_kernel_size),
        embed_dim=conf.get('teacher_dim', cfg.embed_dim),
    )
    if in_channels is not None:
        cfg = cfg._replace(in_channels=in_channels)
    return validate_encoder_config(cfg)


class FFCLayerParams(NamedTuple):
    """ Conv over stacked real/imaginary spectra of C channels: kernel (2C, 2C, k) """
    kernel: Tensor
    bias: Tensor
    gamma: Tensor
    beta: Tensor
    norm: NormState

    @property
    def channels(self) -> int:
        return self.kernel.shape[1] // 2

    @property
    def kernel_size(self) -> int:
        return self.kernel.shape[2]


class BranchParams(NamedTuple):
    expand_w: Tensor
    expand_b: Tensor
    ffc: FFCLayerParams
    bottleneck_w: Tensor
    bottleneck_b: Tensor


class PMBBlockParams(NamedTuple):
    branches: Tuple[BranchParams, ...]
    mlp_w: Tensor
    mlp_b: Tensor


class ClassificationHeadParams(NamedTuple):
    hidden_w: Tensor
    hidden_b: Tensor
    ffc: FFCLayerParams
    out_w: Tensor
    out_b: Tensor


class EmbeddingHeadParams(NamedTuple):
    w: Tensor
    b: Tensor


class EncoderParams(NamedTuple):
    projection_w: Tensor
    projection_b: Tensor
    stem_ffc: FFCLayerParams
    blocks: Tuple[PMBBlockParams, ...]
    classifier: ClassificationHeadParams
    embedder: EmbeddingHeadParams


class ActivationTrace(NamedTuple):
    """ Intermediate values kept for explanations """
    inputs: Tensor
    stem: Tensor
    pooled: Tensor


def _weight(rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int) -> Tensor:
    return Tensor(rng.standard_normal(shape) / np.sqrt(fan_in), requires_grad=True)


def _zeros(size: int) -> Tensor:
    return Tensor(np.zeros(size), requires_grad=True)


def init_ffc(channels: int, kernel_size: int, rng: np.random.Generator) -> FFCLayerParams:
    stacked = 2 * channels
    return FFCLayerParams(
        kernel=_weight(rng, (stacked, stacked, kernel_size), stacked * kernel_size),
        bias=_zeros(stacked),
        gamma=Tensor(np.ones(stacked), requires_grad=True),
        beta=_zeros(stacked),
        norm=NormState.fresh(stacked),
    )


def init_pmb(width: int, kernel_sizes: Tuple[int, ...], rng: np.random.Generator) -> PMBBlockParams:
    if width % 4:
        raise ConfigError('PMB width must be divisible by 4, got {}'.format(width))
    hidden, quarter = 2 * width, width // 4
    branches = tuple(
        BranchParams(
            expand_w=_weight(rng, (width, hidden), width),
            expand_b=_zeros(hidden),
            ffc=init_ffc(hidden, size, rng),
            bottleneck_w=_weight(rng, (hidden, quarter), hidden),
            bottleneck_b=_zeros(quarter),
        )
        for size in kernel_sizes
    )
    return PMBBlockParams(
        branches=branches,
        mlp_w=_weight(rng, (width, quarter), width),
        mlp_b=_zeros(quarter),
    )


def init_params(cfg: EncoderConfig, seed: int) -> EncoderParams:
    """
    Seeded parameters of an encoder, weights ~ N(0, 1/fan_in), biases 0
    """
    validate_encoder_config(cfg)
    rng = make_rng(seed, 'weights')
    width = cfg.width
    return EncoderParams(
        projection_w=_weight(rng, (width, cfg.in_channels, 1), cfg.in_channels),
        projection_b=_zeros(width),
        stem_ffc=init_ffc(width, cfg.stem_kernel_size, rng),
        blocks=tuple(init_pmb(width, tuple(cfg.branch_kernel_sizes), rng)
                     for _ in range(cfg.n_blocks)),
        classifier=ClassificationHeadParams(
            hidden_w=_weight(rng, (width, width), width),
            hidden_b=_zeros(width),
            ffc=init_ffc(1, cfg.head_kernel_size, rng),
            out_w=_weight(rng, (width, cfg.num_classes), width),
            out_b=_zeros(cfg.num_classes),
        ),
        embedder=EmbeddingHeadParams(
            w=_weight(rng, (width, cfg.embed_dim), width),
            b=_zeros(cfg.embed_dim),
        ),
    )


def ffc_forward(x: Tensor, p: FFCLayerParams, training: bool) -> Tensor:
    """
    Fast Fourier convolution of (B, C, T):
    real FFT along time, real and imaginary parts stacked on channels,
    conv1d, batch norm, ReLU, split back and inverse FFT
    :return: real tensor of the input shape
    """
    if x.ndim != 3 or x.shape[1] != p.channels:
        raise ShapeError('FFC layer of {} channels got input {}'.format(p.channels, x.shape))
    spectrum = real_fft(x)
    stacked = concat_channels([spectrum.real, spectrum.imag])
    mixed = conv1d(stacked, p.kernel, p.bias, padding=(p.kernel_size - 1) // 2)
    mixed = relu(batch_norm1d(mixed, p.gamma, p.beta, p.norm, training))
    real, imag = split_channels(mixed, [p.channels, p.channels])
    return inverse_real_fft(ComplexSpectrum(real, imag, spectrum.original_length))


def _pointwise(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """ Per-timestep affine map over the channels of (B, C, T) """
    return affine(x.transpose(0, 2, 1), w, b).transpose(0, 2, 1)


def pmb_forward(x: Tensor, p: PMBBlockParams, training: bool) -> Tensor:
    """
    Parallel multi-branch block on (B, D, T).
    Three branches expand D -> 2D with GELU, run an FFC and shrink to D/4;
    the fourth is a single D -> D/4 map. Branch outputs are concatenated
    back to D channels and passed through GELU.
    """
    width = x.shape[1]
    if width % 4:
        raise ConfigError('PMB input width must be divisible by 4, got {}'.format(width))
    outputs = []
    for branch in p.branches:
        hidden = gelu(_pointwise(x, branch.expand_w, branch.expand_b))
        hidden = ffc_forward(hidden, branch.ffc, training)
        outputs.append(_pointwise(hidden, branch.bottleneck_w, branch.bottleneck_b))
    outputs.append(_pointwise(x, p.mlp_w, p.mlp_b))
    return gelu(concat_channels(outputs))


def classification_head(pooled: Tensor, p: ClassificationHeadParams, training: bool) -> Tensor:
    """
    affine D -> D, GELU, FFC over the vector as a 1-channel sequence of length D,
    affine D -> k
    """
    hidden = gelu(affine(pooled, p.hidden_w, p.hidden_b))
    batch, width = hidden.shape
    hidden = ffc_forward(hidden.reshape(batch, 1, width), p.ffc, training).reshape(batch, width)
    return affine(hidden, p.out_w, p.out_b)


def embedding_head(pooled: Tensor, p: EmbeddingHeadParams) -> Tensor:
    return affine(pooled, p.w, p.b)


def stem_forward(x: Tensor, params: EncoderParams, training: bool) -> Tensor:
    projected = conv1d(x, params.projection_w, params.projection_b)
    return ffc_forward(projected, params.stem_ffc, training)


def encoder_forward(x: Tensor, params: EncoderParams, cfg: EncoderConfig,
                    training: bool) -> Tuple[Tensor, Tensor, ActivationTrace]:
    """
    Maps windows to class logits and semantic embeddings
    :param x: (B, C_in, T)
    :param params: encoder parameters
    :param cfg: encoder configuration
    :param training: batch statistics and running-stat updates when True
    :return: logits (B, k), embedding (B, N), trace
    """
    if x.ndim != 3 or x.shape[1:] != (cfg.in_channels, cfg.window_length):
        raise ShapeError('Encoder expects (B, {}, {}), got {}'.format(
            cfg.in_channels, cfg.window_length, x.shape))
    stem = stem_forward(x, params, training)

    hidden = pmb_forward(stem, params.blocks[0], training)
    for block in params.blocks[1:]:
        hidden = relu(pmb_forward(hidden, block, training) + hidden)

    pooled = global_avg_pool(hidden)
    logits = classification_head(pooled, params.classifier, training)
    embedding = embedding_head(pooled, params.embedder)
    return logits, embedding, ActivationTrace(inputs=x, stem=stem, pooled=pooled)


def encode(params: EncoderParams, cfg: EncoderConfig, windows: np.ndarray,
           batch_size: int = 256) -> Tuple[np.ndarray, np.ndarray]:
    """
    Eval-mode inference over many windows
    :return: logits (W, k), embeddings (W, N)
    """
    logits, embeddings = [], []
    with no_grad():
        for start in range(0, len(windows), batch_size):
            batch = Tensor(windows[start:start + batch_size])
            batch_logits, batch_embedding, _ = encoder_forward(batch, params, cfg, training=False)
            logits.append(batch_logits.data)
            embeddings.append(batch_embedding.data)
    if not logits:
        return np.zeros((0, cfg.num_classes)), np.zeros((0, cfg.embed_dim))
    return np.concatenate(logits), np.concatenate(embeddings)


def stem_channel_energy(params: EncoderParams, cfg: EncoderConfig,
                        window: np.ndarray) -> np.ndarray:
    """
    Mean squared change of the eval-mode stem output when each input channel
    is zeroed in turn
    :param window: (C_in, T)
    :return: (C_in,) energies
    """
    window = np.asarray(window, dtype=np.float64)
    copies = np.repeat(window[None], cfg.in_channels + 1, axis=0)
    for channel in range(cfg.in_channels):
        copies[channel + 1, channel] = 0.0
    with no_grad():
        stem = stem_forward(Tensor(copies), params, training=False).data
    return ((stem[1:] - stem[:1]) ** 2).mean(axis=(1, 2))


def parameter_census(params: EncoderParams) -> 'OrderedDict[str, int]':
    """
    Trainable parameter counts per component and in total
    """
    census = OrderedDict()
    census['stem'] = (count_parameters((params.projection_w, params.projection_b))
                      + count_parameters(params.stem_ffc))
    for index, block in enumerate(params.blocks):
        census['block_{}'.format(index + 1)] = count_parameters(block)
    census['classification_head'] = count_parameters(params.classifier)
    census['embedding_head'] = count_parameters(params.embedder)
    census['total'] = sum(census.values())
    return census


def save_checkpoint(path: str, params: EncoderParams, cfg: EncoderConfig,
                    meta: Optional[Dict] = None) -> None:
    """
    Writes parameters, running statistics and the encoder configuration
    :param meta: extra header fields, e.g. label names, dataset id, seed
    """
    header = dict(meta or {})
    header['encoder'] = dict(cfg._asdict(), branch_kernel_sizes=list(cfg.branch_kernel_sizes))
    write_tensors(path, CHECKPOINT_MAGIC, header, state_arrays(params))


def load_checkpoint(path: str) -> Tuple[EncoderParams, EncoderConfig, Dict]:
    """
    Reads a checkpoint written by save_checkpoint
    :return: (params, cfg, header)
    """
    header, arrays = read_tensors(path, CHECKPOINT_MAGIC)
    try:
        raw = dict(header['encoder'])
        raw['branch_kernel_sizes'] = tuple(raw['branch_kernel_sizes'])
        cfg = validate_encoder_config(EncoderConfig(**raw))
    except (KeyError, TypeError) as error:
        raise DataError('{} has no valid encoder block: {}'.format(path, error))
    params = load_state_arrays(init_params(cfg, seed=0), arrays)
    logger.info('Loaded checkpoint %s (%d parameters)', path, count_parameters(params))
    return params, cfg, header
