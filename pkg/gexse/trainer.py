"""
Multi-task optimization of the encoder: weighted representation and
classification losses, AdamW, checkpoints and the training log
"""
import logging
import os
from collections import OrderedDict
from typing import Any, Dict, List, NamedTuple, Optional, Tuple

import numpy as np
import pandas as pd
from sklearn.linear_model import LogisticRegression

from gexse.data.teacher import TeacherTable, teacher_matrix
from gexse.data.windows import WindowSet
from gexse.encoder import (
    EncoderConfig, EncoderParams, encode, encoder_forward, init_params, save_checkpoint
)
from gexse.evaluator import ConfusionMatrix, MetricsReport, confusion, macro_f1, metrics
from gexse.misc import ConfigError, DataError, NumericError, ShapeError, make_rng
from gexse.persistence import OPTIMIZER_MAGIC, read_tensors, write_tensors
from gexse.tensor import Tensor, affine, backward, mse, softmax_cross_entropy
from gexse.tensor.ops import NormState
from gexse.tensor.tree import copy_tree, map_leaves, named_parameters, zero_grads

logger = logging.getLogger(__name__)

ADAM_BETAS = (0.9, 0.999)
ADAM_EPSILON = 1e-8

EPOCH_COLUMNS = ['epoch', 'total', 'l_class', 'l_repr', 'test_macro_f1']
STEP_COLUMNS = ['step', 'epoch', 'total', 'l_class', 'l_repr']


class TrainConfig(NamedTuple):
    alpha: float = 1.0
    beta: float = 1.0
    learning_rate: float = 1e-3
    epochs: int = 300
    batch_size: int = 128
    weight_decay: float = 0.01
    seed: int = 0
    checkpoint_every: int = 50

    @classmethod
    def from_config(cls, conf: Dict) -> 'TrainConfig':
        section = conf.get('train', {})
        fields = {name: section[name] for name in cls._fields if name in section}
        fields['seed'] = conf.get('seed', 0)
        return validate_train_config(cls(**fields))


def validate_train_config(cfg: TrainConfig) -> TrainConfig:
    if cfg.alpha < 0 or cfg.beta < 0 or cfg.alpha + cfg.beta <= 0:
        raise ConfigError('Loss weights must be non-negative and not both zero, '
                          'got alpha={} beta={}'.format(cfg.alpha, cfg.beta))
    if cfg.learning_rate <= 0:
        raise ConfigError('Learning rate must be positive, got {}'.format(cfg.learning_rate))
    if cfg.epochs < 1 or cfg.batch_size < 1:
        raise ConfigError('epochs and batch_size must be positive')
    if cfg.weight_decay < 0:
        raise ConfigError('Weight decay must be non-negative, got {}'.format(cfg.weight_decay))
    return cfg


class OptimizerState(NamedTuple):
    """ AdamW moment buffers keyed by parameter name """
    first: Dict[str, np.ndarray]
    second: Dict[str, np.ndarray]
    step: int = 0
    betas: Tuple[float, float] = ADAM_BETAS
    epsilon: float = ADAM_EPSILON

    @classmethod
    def create(cls, params: Any) -> 'OptimizerState':
        first = OrderedDict((name, np.zeros(t.shape)) for name, t in named_parameters(params))
        second = OrderedDict((name, np.zeros(t.shape)) for name, t in named_parameters(params))
        return cls(first=first, second=second)


class TrainingLog(NamedTuple):
    epochs: pd.DataFrame
    steps: pd.DataFrame
    best_epoch: int
    header: Dict[str, Any]

    @property
    def best_macro_f1(self) -> float:
        if self.epochs.empty:
            return 0.0
        return float(self.epochs.loc[self.epochs['epoch'] == self.best_epoch,
                                     'test_macro_f1'].iloc[0])


def multitask_loss(logits: Tensor, embedding: Tensor, true_label_onehot: np.ndarray,
                   teacher_embedding: np.ndarray,
                   cfg: TrainConfig) -> Tuple[Tensor, Tensor, Tensor]:
    """
    total = alpha * MSE(embedding, teacher) + beta * CE(logits, labels)
    :param logits: (B, k)
    :param embedding: (B, N)
    :param true_label_onehot: (B, k)
    :param teacher_embedding: (B, N) teacher vector of each window's true label
    :param cfg: loss weights
    :return: total, l_class, l_repr
    """
    if embedding.shape != np.shape(teacher_embedding):
        raise ShapeError('Embedding {} does not match teacher targets {}'.format(
            embedding.shape, np.shape(teacher_embedding)))
    l_class = softmax_cross_entropy(logits, true_label_onehot)
    l_repr = mse(embedding, teacher_embedding)
    total = l_repr * cfg.alpha + l_class * cfg.beta
    return total, l_class, l_repr


def collect_grads(params: Any) -> 'OrderedDict[str, np.ndarray]':
    return OrderedDict((name, tensor.grad_or_zero()) for name, tensor in named_parameters(params))


def adamw_step(params: Any, grads: Dict[str, np.ndarray], state: OptimizerState,
               cfg: TrainConfig) -> Tuple[Any, OptimizerState]:
    """
    One AdamW update with decoupled weight decay and bias-corrected moments.
    Parameters are immutable tensors, so the updated tree is returned along
    with the new optimizer state; running statistics are carried over as is.
    :param params: parameter tree
    :param grads: parameter name -> gradient
    :param state: optimizer state of the previous step
    :param cfg: learning rate and weight decay
    :return: (updated params, updated state)
    """
    for name, grad in grads.items():
        if not np.all(np.isfinite(grad)):
            raise NumericError('Non-finite gradient in parameter {} (step {})'.format(
                name, state.step + 1))

    step = state.step + 1
    beta1, beta2 = state.betas
    correction1 = 1.0 - beta1 ** step
    correction2 = 1.0 - beta2 ** step
    decay = 1.0 - cfg.learning_rate * cfg.weight_decay
    first: Dict[str, np.ndarray] = OrderedDict()
    second: Dict[str, np.ndarray] = OrderedDict()

    def update(name: str, leaf: Any) -> Any:
        if isinstance(leaf, NormState):
            return leaf
        grad = grads.get(name)
        if grad is None:
            grad = np.zeros(leaf.shape)
        if grad.shape != leaf.shape or state.first[name].shape != leaf.shape:
            raise ShapeError('Gradient of {} has shape {}, parameter {}'.format(
                name, grad.shape, leaf.shape))
        first[name] = beta1 * state.first[name] + (1.0 - beta1) * grad
        second[name] = beta2 * state.second[name] + (1.0 - beta2) * grad * grad
        adaptive = (first[name] / correction1) / (np.sqrt(second[name] / correction2)
                                                  + state.epsilon)
        value = leaf.data * decay - cfg.learning_rate * adaptive
        return Tensor(value, requires_grad=True, name=name)

    updated = map_leaves(params, update)
    return updated, OptimizerState(first, second, step, state.betas, state.epsilon)


def save_optimizer_state(path: str, state: OptimizerState) -> None:
    tensors = OrderedDict()
    for name in state.first:
        tensors['m.' + name] = state.first[name]
        tensors['v.' + name] = state.second[name]
    meta = {'step': state.step, 'betas': list(state.betas), 'epsilon': state.epsilon}
    write_tensors(path, OPTIMIZER_MAGIC, meta, tensors)


def load_optimizer_state(path: str, params: Any) -> OptimizerState:
    """ Reads an optimizer sidecar and checks it against the parameter tree """
    meta, tensors = read_tensors(path, OPTIMIZER_MAGIC)
    fresh = OptimizerState.create(params)
    first, second = OrderedDict(), OrderedDict()
    for name, zeros in fresh.first.items():
        for prefix, target in (('m.', first), ('v.', second)):
            key = prefix + name
            if key not in tensors:
                raise DataError('{} has no moment {}'.format(path, key))
            if tensors[key].shape != zeros.shape:
                raise DataError('{}: moment {} has shape {}, expected {}'.format(
                    path, key, tensors[key].shape, zeros.shape))
            target[name] = tensors[key]
    return OptimizerState(first, second, int(meta.get('step', 0)),
                          tuple(meta.get('betas', ADAM_BETAS)),
                          float(meta.get('epsilon', ADAM_EPSILON)))


def write_training_log(log: TrainingLog, path: str) -> None:
    """ Epoch table as CSV preceded by `# key=value` header lines """
    with open(path, 'w') as file:
        for key, value in log.header.items():
            file.write('# {}={}\n'.format(key, value))
        log.epochs.to_csv(file, index=False, columns=EPOCH_COLUMNS)


def read_training_log(path: str) -> Tuple[Dict[str, str], pd.DataFrame]:
    header = {}
    with open(path) as file:
        for line in file:
            if not line.startswith('#'):
                break
            key, _, value = line[1:].strip().partition('=')
            header[key] = value
    return header, pd.read_csv(path, comment='#')


def _checkpoint_meta(train_ws: WindowSet, cfg: TrainConfig, epoch: int) -> Dict:
    return {
        'dataset_id': train_ws.dataset_id,
        'label_names': list(train_ws.label_names),
        'channel_groups': {name: list(members)
                           for name, members in train_ws.channel_groups.items()},
        'seed': cfg.seed,
        'epoch': epoch,
        'train': cfg._asdict(),
    }


def evaluate_macro_f1(params: EncoderParams, enc_cfg: EncoderConfig, ws: WindowSet,
                      batch_size: int = 256) -> float:
    if ws.num_windows == 0:
        return 0.0
    logits, _ = encode(params, enc_cfg, ws.windows, batch_size)
    return macro_f1(np.argmax(logits, axis=1), ws.labels, enc_cfg.num_classes)


def train(train_ws: WindowSet, test_ws: WindowSet, teacher: TeacherTable,
          enc_cfg: EncoderConfig, train_cfg: TrainConfig,
          out_dir: Optional[str] = None) -> Tuple[EncoderParams, TrainingLog]:
    """
    Seeded epoch loop: shuffle, mini-batches, forward, multitask loss, backward,
    AdamW. Test macro-F1 is measured after every epoch and the parameters of
    the best epoch are returned.
    :param train_ws: normalized training windows
    :param test_ws: normalized test windows
    :param teacher: teacher embeddings of the label names
    :param enc_cfg: encoder configuration
    :param train_cfg: optimization configuration
    :param out_dir: directory for checkpoints and training_log.csv, None to skip writing
    :return: best parameters and the training log
    """
    validate_train_config(train_cfg)
    if train_ws.windows.shape[1:] != (enc_cfg.in_channels, enc_cfg.window_length):
        raise ShapeError('Training windows {} do not match encoder input ({}, {})'.format(
            train_ws.windows.shape, enc_cfg.in_channels, enc_cfg.window_length))
    if train_ws.num_windows == 0:
        raise DataError('No training windows')
    if train_ws.num_classes != enc_cfg.num_classes:
        raise ShapeError('Encoder has {} classes, windows have {}'.format(
            enc_cfg.num_classes, train_ws.num_classes))

    targets = teacher_matrix(teacher, train_ws.label_names)
    if targets.shape[1] != enc_cfg.embed_dim:
        raise ShapeError('Teacher width {} does not match embedding width {}'.format(
            targets.shape[1], enc_cfg.embed_dim))
    one_hot = np.eye(enc_cfg.num_classes)

    params = init_params(enc_cfg, train_cfg.seed)
    state = OptimizerState.create(params)
    shuffle_rng = make_rng(train_cfg.seed, 'shuffle')
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)

    epoch_rows: List[List[float]] = []
    step_rows: List[List[float]] = []
    best_params, best_state, best_epoch, best_f1 = None, None, 0, -1.0
    step = 0
    for epoch in range(1, train_cfg.epochs + 1):
        order = shuffle_rng.permutation(train_ws.num_windows)
        sums = np.zeros(3)
        for start in range(0, len(order), train_cfg.batch_size):
            index = order[start:start + train_cfg.batch_size]
            labels = train_ws.labels[index]
            logits, embedding, _ = encoder_forward(Tensor(train_ws.windows[index]), params,
                                                   enc_cfg, training=True)
            total, l_class, l_repr = multitask_loss(logits, embedding, one_hot[labels],
                                                    targets[labels], train_cfg)
            if not np.isfinite(total.item()):
                raise NumericError('Loss is not finite at epoch {} step {}'.format(epoch, step + 1))
            zero_grads(params)
            backward(total)
            params, state = adamw_step(params, collect_grads(params), state, train_cfg)

            step += 1
            values = [total.item(), l_class.item(), l_repr.item()]
            step_rows.append([step, epoch] + values)
            sums += np.array(values) * len(index)

        test_f1 = evaluate_macro_f1(params, enc_cfg, test_ws)
        means = sums / train_ws.num_windows
        epoch_rows.append([epoch, means[0], means[1], means[2], test_f1])
        logger.info('Epoch %d/%d: total=%.5f l_class=%.5f l_repr=%.5f test macro-F1=%.4f',
                    epoch, train_cfg.epochs, means[0], means[1], means[2], test_f1)

        if test_f1 > best_f1:
            best_params, best_state, best_epoch, best_f1 = copy_tree(params), state, epoch, test_f1
        if out_dir and train_cfg.checkpoint_every and epoch % train_cfg.checkpoint_every == 0:
            base = os.path.join(out_dir, 'epoch_{:04d}'.format(epoch))
            save_checkpoint(base + '.ckpt', params, enc_cfg,
                            _checkpoint_meta(train_ws, train_cfg, epoch))
            save_optimizer_state(base + '.opt', state)

    epochs = pd.DataFrame(epoch_rows, columns=EPOCH_COLUMNS)
    epochs['epoch'] = epochs['epoch'].astype(np.int64)
    steps = pd.DataFrame(step_rows, columns=STEP_COLUMNS)
    steps[['step', 'epoch']] = steps[['step', 'epoch']].astype(np.int64)
    header = OrderedDict(sorted(train_cfg._asdict().items()))
    header['dataset_id'] = train_ws.dataset_id
    header['teacher'] = teacher.source
    log = TrainingLog(epochs=epochs, steps=steps, best_epoch=best_epoch, header=header)
    logger.info('Best epoch %d with test macro-F1 %.4f', best_epoch, best_f1)

    if out_dir:
        save_checkpoint(os.path.join(out_dir, 'best.ckpt'), best_params, enc_cfg,
                        _checkpoint_meta(train_ws, train_cfg, best_epoch))
        save_optimizer_state(os.path.join(out_dir, 'best.opt'), best_state)
        write_training_log(log, os.path.join(out_dir, 'training_log.csv'))
    return best_params, log


class ProbeResult(NamedTuple):
    model: LogisticRegression
    confusion: ConfusionMatrix
    report: MetricsReport


def train_linear_probe(train_ws: WindowSet, test_ws: WindowSet, seed: int = 0) -> ProbeResult:
    """
    Multinomial logistic regression on the flattened windows, the baseline
    every encoder run should beat
    """
    if train_ws.num_windows == 0:
        raise DataError('No training windows')
    model = LogisticRegression(max_iter=1000, random_state=seed)
    model.fit(train_ws.windows.reshape(train_ws.num_windows, -1), train_ws.labels)
    if test_ws.num_windows:
        predicted = model.predict(test_ws.windows.reshape(test_ws.num_windows, -1))
    else:
        predicted = np.zeros(0, dtype=np.int64)
    cm = confusion(predicted, test_ws.labels, train_ws.num_classes, train_ws.label_names)
    report = metrics(cm)
    logger.info('Linear probe test macro-F1 %.4f', report.macro_f1)
    return ProbeResult(model=model, confusion=cm, report=report)


def probe_logit_fn(model: LogisticRegression, num_classes: int):
    """
    Differentiable logits of a fitted probe over (B, C, T) windows.
    Binary probes are expanded to two logits [0, z].
    """
    coef = np.asarray(model.coef_, dtype=np.float64)
    intercept = np.asarray(model.intercept_, dtype=np.float64)
    if coef.shape[0] == 1:
        coef = np.vstack([np.zeros_like(coef), coef])
        intercept = np.concatenate([[0.0], intercept])
    full_coef = np.zeros((num_classes, coef.shape[1]))
    full_intercept = np.full(num_classes, -1e3)
    full_coef[model.classes_] = coef
    full_intercept[model.classes_] = intercept
    weights, bias = Tensor(full_coef.T), Tensor(full_intercept)

    def logit_fn(x: Tensor) -> Tensor:
        return affine(x.reshape(x.shape[0], -1), weights, bias)

    return logit_fn
