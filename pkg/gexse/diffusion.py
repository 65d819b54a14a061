"""
Conditional denoising diffusion on labeled 2D Gaussian mixtures:
forward noising chain, noise-prediction training, a noise-aware classifier
and classifier-guided ancestral sampling
"""
import logging
from collections import OrderedDict
from typing import Callable, Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from cachetools import LRUCache, cached

from gexse.misc import ConfigError, DataError, NumericError, make_rng
from gexse.persistence import DIFFUSION_MAGIC, read_tensors, write_tensors
from gexse.tensor import (
    Tensor, affine, backward, concat, gelu, log_softmax, mse, no_grad, softmax_cross_entropy
)
from gexse.tensor.tree import load_state_arrays, map_leaves, state_arrays, zero_grads
from gexse.trainer import OptimizerState, TrainConfig, adamw_step, collect_grads

logger = logging.getLogger(__name__)

BETA_START = 1e-4
BETA_END = 0.02
MIXTURE_STD = 0.25

TWO_MODES = ((2.0, 2.0), (-2.0, -2.0))
FOUR_MODES = ((2.0, 2.0), (-2.0, 2.0), (-2.0, -2.0), (2.0, -2.0))


class DiffusionSchedule(NamedTuple):
    """ betas[t - 1] is the noise variance of step t = 1..T """
    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray

    @property
    def steps(self) -> int:
        return len(self.betas)


class DiffusionConfig(NamedTuple):
    steps: int = 500
    iterations: int = 3000
    batch_size: int = 256
    learning_rate: float = 2e-3
    hidden: int = 64
    time_dim: int = 16
    num_classes: int = 2
    seed: int = 0

    @classmethod
    def from_config(cls, conf: Dict, num_classes: int = 2) -> 'DiffusionConfig':
        section = conf.get('diffusion', {})
        fields = {name: section[name] for name in cls._fields if name in section}
        return cls(num_classes=num_classes, seed=conf.get('seed', 0), **fields)


class MLPParams(NamedTuple):
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor
    w3: Tensor
    b3: Tensor


class DiffusionModels(NamedTuple):
    denoiser: MLPParams
    classifier: MLPParams


@cached(LRUCache(maxsize=16))
def _linear_betas(steps: int, start: float, end: float) -> np.ndarray:
    betas = np.linspace(start, end, steps)
    betas.setflags(write=False)
    return betas


def schedule_from_betas(betas: Sequence[float]) -> DiffusionSchedule:
    """
    Schedule of arbitrary noise variances
    :param betas: nondecreasing values in [0, 1)
    :return: DiffusionSchedule with cumulative products
    """
    betas = np.array(betas, dtype=np.float64)
    if betas.ndim != 1 or len(betas) < 1:
        raise ConfigError('A schedule needs at least one step')
    if np.any(betas < 0) or np.any(betas >= 1):
        raise ConfigError('Noise variances must lie in [0, 1)')
    if np.any(np.diff(betas) < 0):
        raise ConfigError('Noise variances must be nondecreasing')
    alphas = 1.0 - betas
    return DiffusionSchedule(betas=betas, alphas=alphas, alpha_bars=np.cumprod(alphas))


def schedule(steps: int = 500, beta_start: float = BETA_START,
             beta_end: float = BETA_END) -> DiffusionSchedule:
    """ Linear schedule from beta_start to beta_end over the given steps """
    if steps < 1:
        raise ConfigError('Diffusion needs at least one step, got {}'.format(steps))
    return schedule_from_betas(_linear_betas(steps, beta_start, beta_end))


def forward_chain(x0: np.ndarray, sched: DiffusionSchedule,
                  rng: np.random.Generator) -> np.ndarray:
    """
    Stepwise noising x_t = sqrt(1 - beta_t) x_{t-1} + sqrt(beta_t) eps_t
    :return: trajectory (T, *x0.shape) of x_1..x_T
    """
    x = np.asarray(x0, dtype=np.float64)
    trajectory = np.empty((sched.steps,) + x.shape)
    for index, beta in enumerate(sched.betas):
        x = np.sqrt(1.0 - beta) * x + np.sqrt(beta) * rng.standard_normal(x.shape)
        trajectory[index] = x
    return trajectory


def closed_form_marginal(x0: np.ndarray, t: np.ndarray, sched: DiffusionSchedule,
                         rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """
    One-shot sample of x_t given x_0
    :param x0: (n, d) clean samples
    :param t: (n,) steps in 1..T
    :return: x_t and the noise used
    """
    t = np.asarray(t)
    if np.any(t < 1) or np.any(t > sched.steps):
        raise ConfigError('Diffusion steps must lie in 1..{}'.format(sched.steps))
    alpha_bar = sched.alpha_bars[t - 1][:, None]
    noise = rng.standard_normal(np.shape(x0))
    return np.sqrt(alpha_bar) * x0 + np.sqrt(1.0 - alpha_bar) * noise, noise


def make_mixture(n: int, centers: Sequence[Sequence[float]], std: float,
                 rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """
    Labeled isotropic Gaussian mixture with equally likely components
    :return: points (n, 2) and labels (n,)
    """
    centers = np.asarray(centers, dtype=np.float64)
    labels = rng.integers(0, len(centers), n)
    return centers[labels] + std * rng.standard_normal((n, centers.shape[1])), labels


@cached(LRUCache(maxsize=8))
def embedding_frequencies(dim: int) -> np.ndarray:
    half = dim // 2
    frequencies = np.exp(-np.log(10000.0) * np.arange(half) / max(1, half))
    frequencies.setflags(write=False)
    return frequencies


def time_embedding(t: np.ndarray, dim: int) -> np.ndarray:
    """ Sinusoidal (n, dim) embedding of integer steps """
    angles = np.asarray(t, dtype=np.float64)[:, None] * embedding_frequencies(dim)[None, :]
    return np.concatenate([np.sin(angles), np.cos(angles)], axis=1)


def init_mlp(in_dim: int, hidden: int, out_dim: int, rng: np.random.Generator) -> MLPParams:
    """ Two GELU hidden layers; the output layer starts at zero """
    def weight(rows: int, cols: int) -> Tensor:
        return Tensor(rng.standard_normal((rows, cols)) / np.sqrt(rows), requires_grad=True)

    return MLPParams(
        w1=weight(in_dim, hidden), b1=Tensor(np.zeros(hidden), requires_grad=True),
        w2=weight(hidden, hidden), b2=Tensor(np.zeros(hidden), requires_grad=True),
        w3=Tensor(np.zeros((hidden, out_dim)), requires_grad=True),
        b3=Tensor(np.zeros(out_dim), requires_grad=True),
    )


def mlp_forward(x: Tensor, p: MLPParams) -> Tensor:
    hidden = gelu(affine(x, p.w1, p.b1))
    hidden = gelu(affine(hidden, p.w2, p.b2))
    return affine(hidden, p.w3, p.b3)


def init_models(cfg: DiffusionConfig) -> DiffusionModels:
    if cfg.time_dim < 2 or cfg.time_dim % 2:
        raise ConfigError('Time embedding width must be even, got {}'.format(cfg.time_dim))
    if cfg.num_classes < 2:
        raise ConfigError('Diffusion needs at least 2 labels, got {}'.format(cfg.num_classes))
    rng = make_rng(cfg.seed, 'diffusion/weights')
    return DiffusionModels(
        denoiser=init_mlp(2 + cfg.time_dim + cfg.num_classes, cfg.hidden, 2, rng),
        classifier=init_mlp(2 + cfg.time_dim, cfg.hidden, cfg.num_classes, rng),
    )


def predict_noise(params: MLPParams, x_t: Tensor, t: np.ndarray, y: np.ndarray,
                  cfg: DiffusionConfig) -> Tensor:
    """ eps_theta(x_t, t, y) """
    condition = np.concatenate([time_embedding(t, cfg.time_dim),
                                np.eye(cfg.num_classes)[y]], axis=1)
    return mlp_forward(concat([x_t, Tensor(condition)], axis=1), params)


def classifier_logits(params: MLPParams, x_t: Tensor, t: np.ndarray,
                      cfg: DiffusionConfig) -> Tensor:
    """ f_phi(y | x_t, t) as logits """
    return mlp_forward(concat([x_t, Tensor(time_embedding(t, cfg.time_dim))], axis=1), params)


def denoiser_loss(params: MLPParams, x0: np.ndarray, y: np.ndarray, sched: DiffusionSchedule,
                  cfg: DiffusionConfig, rng: np.random.Generator) -> Tensor:
    """ Mean over the batch of ||eps - eps_theta(x_t, t, y)||² with t uniform in 1..T """
    t = rng.integers(1, sched.steps + 1, len(x0))
    x_t, noise = closed_form_marginal(x0, t, sched, rng)
    predicted = predict_noise(params, Tensor(x_t), t, y, cfg)
    return mse(predicted, noise) * float(noise.shape[1])


def classifier_loss(params: MLPParams, x0: np.ndarray, y: np.ndarray, sched: DiffusionSchedule,
                    cfg: DiffusionConfig, rng: np.random.Generator) -> Tensor:
    t = rng.integers(1, sched.steps + 1, len(x0))
    x_t, _ = closed_form_marginal(x0, t, sched, rng)
    return softmax_cross_entropy(classifier_logits(params, Tensor(x_t), t, cfg),
                                 np.eye(cfg.num_classes)[y])


LossFn = Callable[[MLPParams, np.ndarray, np.ndarray, DiffusionSchedule, DiffusionConfig,
                   np.random.Generator], Tensor]


def _fit(params: MLPParams, loss_fn: LossFn, x: np.ndarray, y: np.ndarray,
         sched: DiffusionSchedule, cfg: DiffusionConfig,
         consumer: str) -> Tuple[MLPParams, np.ndarray]:
    if len(x) == 0:
        raise DataError('No training points')
    rng = make_rng(cfg.seed, consumer)
    optimizer = TrainConfig(learning_rate=cfg.learning_rate, weight_decay=0.0, seed=cfg.seed)
    state = OptimizerState.create(params)
    losses: List[float] = []
    for iteration in range(cfg.iterations):
        index = rng.integers(0, len(x), cfg.batch_size)
        loss = loss_fn(params, x[index], y[index], sched, cfg, rng)
        if not np.isfinite(loss.item()):
            raise NumericError('{} loss is not finite at iteration {}'.format(consumer, iteration))
        zero_grads(params)
        backward(loss)
        params, state = adamw_step(params, collect_grads(params), state, optimizer)
        losses.append(loss.item())
        if (iteration + 1) % 500 == 0:
            logger.info('%s iteration %d: loss %.4f', consumer, iteration + 1,
                        float(np.mean(losses[-500:])))
    return params, np.array(losses)


def train_denoiser(x: np.ndarray, y: np.ndarray, sched: DiffusionSchedule,
                   cfg: DiffusionConfig) -> Tuple[MLPParams, np.ndarray]:
    """
    Noise-prediction training on x_t drawn from the closed-form marginal
    :return: trained parameters and the per-iteration losses
    """
    params = init_models(cfg).denoiser
    return _fit(params, denoiser_loss, x, y, sched, cfg, 'diffusion/denoiser')


def train_noisy_classifier(x: np.ndarray, y: np.ndarray, sched: DiffusionSchedule,
                           cfg: DiffusionConfig) -> Tuple[MLPParams, np.ndarray]:
    """ Cross-entropy training of f_phi on points noised at uniformly drawn steps """
    params = init_models(cfg).classifier
    return _fit(params, classifier_loss, x, y, sched, cfg, 'diffusion/classifier')


def _frozen(params: MLPParams) -> MLPParams:
    return map_leaves(params, lambda name, leaf: leaf.detach())


def classifier_log_prob(params: MLPParams, x_t: np.ndarray, t: np.ndarray, y: np.ndarray,
                        cfg: DiffusionConfig) -> Tuple[np.ndarray, np.ndarray]:
    """
    log f_phi(y | x_t, t) of each point and its gradient with respect to x_t
    :return: (n,) log probabilities and (n, 2) gradients
    """
    inputs = Tensor(x_t, requires_grad=True)
    one_hot = np.eye(cfg.num_classes)[np.asarray(y)]
    log_p = log_softmax(classifier_logits(_frozen(params), inputs, t, cfg), axis=1)
    backward((log_p * one_hot).sum())
    return (log_p.data * one_hot).sum(axis=1), inputs.grad_or_zero()


def classifier_accuracy(params: MLPParams, x: np.ndarray, y: np.ndarray, t: int,
                        sched: DiffusionSchedule, cfg: DiffusionConfig,
                        rng: np.random.Generator) -> float:
    """ Accuracy of f_phi on points noised to step t """
    steps = np.full(len(x), t)
    x_t, _ = closed_form_marginal(x, steps, sched, rng)
    with no_grad():
        logits = classifier_logits(params, Tensor(x_t), steps, cfg).data
    return float(np.mean(np.argmax(logits, axis=1) == y))


def reverse_mean(noise: np.ndarray, x_t: np.ndarray, t: int,
                 sched: DiffusionSchedule) -> np.ndarray:
    """ mu_theta(x_t) = (x_t - beta_t / sqrt(1 - alpha_bar_t) eps_theta) / sqrt(alpha_t) """
    beta, alpha, alpha_bar = sched.betas[t - 1], sched.alphas[t - 1], sched.alpha_bars[t - 1]
    return (x_t - beta / np.sqrt(1.0 - alpha_bar) * noise) / np.sqrt(alpha)


def guided_sample(label: int, sched: DiffusionSchedule, denoiser: MLPParams,
                  classifier: Optional[MLPParams], guidance_scale: float, n: int,
                  cfg: DiffusionConfig, rng: np.random.Generator) -> np.ndarray:
    """
    Ancestral sampling from x_T ~ N(0, I). Each reverse mean is shifted by
    guidance_scale · sqrt(beta_t) · grad log f_phi(label | x_t, t); no noise is
    added at the last step.
    :return: (n, 2) samples
    """
    if guidance_scale < 0:
        raise ConfigError('Guidance scale must be non-negative, got {}'.format(guidance_scale))
    if guidance_scale > 0 and classifier is None:
        raise ConfigError('Guided sampling needs a classifier')
    if not 0 <= label < cfg.num_classes:
        raise ConfigError('Label {} outside 0..{}'.format(label, cfg.num_classes - 1))
    labels = np.full(n, label)
    x = rng.standard_normal((n, 2))
    for t in range(sched.steps, 0, -1):
        steps = np.full(n, t)
        with no_grad():
            noise = predict_noise(denoiser, Tensor(x), steps, labels, cfg).data
        mean = reverse_mean(noise, x, t, sched)
        sigma = np.sqrt(sched.betas[t - 1])
        if guidance_scale > 0:
            _, grad = classifier_log_prob(classifier, x, steps, labels, cfg)
            mean = mean + guidance_scale * sigma * grad
        x = mean + sigma * rng.standard_normal((n, 2)) if t > 1 else mean
    return x


def ancestral_sample(label: int, sched: DiffusionSchedule, denoiser: MLPParams, n: int,
                     cfg: DiffusionConfig, rng: np.random.Generator) -> np.ndarray:
    """ Unguided conditional sampling """
    return guided_sample(label, sched, denoiser, None, 0.0, n, cfg, rng)


def write_samples_csv(path: str, samples: np.ndarray, label: int, guidance_scale: float) -> None:
    frame = pd.DataFrame({
        'x': samples[:, 0],
        'y': samples[:, 1],
        'label': label,
        'guidance_scale': guidance_scale,
    }, columns=['x', 'y', 'label', 'guidance_scale'])
    frame.to_csv(path, index=False)
    logger.info('Wrote %d samples to %s', len(frame), path)


def save_models(path: str, models: DiffusionModels, sched: DiffusionSchedule,
                cfg: DiffusionConfig, meta: Optional[Dict] = None) -> None:
    header = dict(meta or {})
    header['diffusion'] = cfg._asdict()
    tensors = OrderedDict(state_arrays(models))
    tensors['schedule.betas'] = sched.betas
    write_tensors(path, DIFFUSION_MAGIC, header, tensors)


def load_models(path: str) -> Tuple[DiffusionModels, DiffusionSchedule, DiffusionConfig, Dict]:
    header, tensors = read_tensors(path, DIFFUSION_MAGIC)
    try:
        cfg = DiffusionConfig(**header['diffusion'])
        betas = tensors.pop('schedule.betas')
    except (KeyError, TypeError) as error:
        raise DataError('{} is not a complete diffusion model: {}'.format(path, error))
    models = load_state_arrays(init_models(cfg), tensors)
    return models, schedule_from_betas(betas), cfg, header
