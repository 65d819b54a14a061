"""
Self-checks of the numerical core: FFT against the naive DFT, autodiff
against finite differences and the metrics harness against scikit-learn
"""
import logging
from typing import Callable, Dict, List, NamedTuple, Sequence

import numpy as np
import pandas as pd
from sklearn.metrics import confusion_matrix, precision_recall_fscore_support
from tabulate import tabulate

from gexse.encoder import EncoderConfig, encoder_forward, init_params
from gexse.evaluator import accuracy, confusion, metrics
from gexse.misc import ConfigError, make_rng
from gexse.tensor import (
    ComplexSpectrum, NormState, Tensor, affine, backward, batch_norm1d, concat, conv1d, gelu,
    global_avg_pool, inverse_real_fft, log_softmax, matmul, mse, no_grad, real_fft, relu,
    softmax_cross_entropy, split_channels
)
from gexse.tensor.gradcheck import DEFAULT_STEP, DEFAULT_TOLERANCE, gradcheck, relative_error
from gexse.tensor.spectral import naive_dft, spectral_energy
from gexse.tensor.tree import map_leaves, named_parameters, zero_grads
from gexse.trainer import TrainConfig, multitask_loss

logger = logging.getLogger(__name__)

SUITES = ('fft', 'gradcheck', 'metrics')
FFT_LENGTHS = (4, 16, 90, 128, 256)
FFT_TOLERANCE = 1e-8
METRICS_TOLERANCE = 1e-12
REPORT_COLUMNS = ['suite', 'check', 'error', 'tolerance', 'passed']


class Check(NamedTuple):
    suite: str
    name: str
    error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(self.error < self.tolerance)


class VerifyReport(NamedTuple):
    checks: List[Check]

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks)

    @property
    def failures(self) -> List[Check]:
        return [check for check in self.checks if not check.passed]

    def to_frame(self) -> pd.DataFrame:
        rows = [[c.suite, c.name, c.error, c.tolerance, c.passed] for c in self.checks]
        return pd.DataFrame(rows, columns=REPORT_COLUMNS)


def fft_suite(seed: int = 0) -> List[Check]:
    """ real_fft against the O(n²) DFT, Parseval and the inverse round trip """
    rng = make_rng(seed, 'verify/fft')
    checks = []
    for length in FFT_LENGTHS:
        x = rng.standard_normal((4, length))
        spectrum = real_fft(x)
        reference = naive_dft(x)
        error = max(np.max(np.abs(spectrum.real.data - reference.real)),
                    np.max(np.abs(spectrum.imag.data - reference.imag)))
        checks.append(Check('fft', 'dft n={}'.format(length), float(error), FFT_TOLERANCE))
        parseval = np.max(np.abs(spectral_energy(spectrum) - (x ** 2).sum(axis=-1)))
        checks.append(Check('fft', 'parseval n={}'.format(length), float(parseval), FFT_TOLERANCE))
        round_trip = np.max(np.abs(inverse_real_fft(spectrum).data - x))
        checks.append(Check('fft', 'inverse n={}'.format(length), float(round_trip),
                            FFT_TOLERANCE))
    return checks


def _op_cases(rng: np.random.Generator) -> List[tuple]:
    """ (name, fn, input arrays) for every differentiable op """
    def normal(*shape):
        return rng.standard_normal(shape)

    state = NormState(rng.standard_normal(3) * 0.1, rng.uniform(0.5, 1.5, 3))
    one_hot = np.eye(4)[rng.integers(0, 4, 5)]
    cases = []
    for shape in ((3,), (2, 3), (4, 5), (2, 3, 4), (1, 7), (3, 1, 2), (6,), (2, 2, 2),
                  (5, 1), (3, 4, 2)):
        label = 'x'.join(str(size) for size in shape)
        cases.extend([
            ('add {}'.format(label), lambda a, b: a + b, [normal(*shape), normal(*shape)]),
            ('mul {}'.format(label), lambda a, b: a * b, [normal(*shape), normal(*shape)]),
            ('div {}'.format(label), lambda a, b: a / b,
             [normal(*shape), rng.uniform(1.0, 2.0, shape)]),
            ('gelu {}'.format(label), gelu, [normal(*shape)]),
            ('relu {}'.format(label), relu, [normal(*shape)]),
            ('mean {}'.format(label), lambda a: a.mean(axis=0), [normal(*shape)]),
        ])
    cases.extend([
        ('sub broadcast', lambda a, b: a - b, [normal(3, 4), normal(4)]),
        ('neg', lambda a: -a, [normal(2, 3)]),
        ('sum axis', lambda a: a.sum(axis=1, keepdims=True), [normal(2, 3, 4)]),
        ('reshape', lambda a: a.reshape(6, 4).transpose(), [normal(2, 3, 4)]),
        ('transpose', lambda a: a.transpose(0, 2, 1), [normal(2, 3, 4)]),
        ('getitem', lambda a: a[1:, ::2], [normal(3, 4)]),
        ('matmul', matmul, [normal(3, 4), normal(4, 2)]),
        ('affine', affine, [normal(3, 4), normal(4, 2), normal(2)]),
        ('conv1d k=1', lambda a, w, b: conv1d(a, w, b), [normal(2, 3, 5), normal(2, 3, 1),
                                                         normal(2)]),
        ('conv1d k=3', lambda a, w, b: conv1d(a, w, b, padding=1),
         [normal(2, 3, 5), normal(4, 3, 3), normal(4)]),
        ('batch_norm1d train', lambda a, g, s: batch_norm1d(a, g, s, state.copy(), training=True),
         [normal(4, 3, 5), rng.uniform(0.5, 1.5, 3), normal(3)]),
        ('batch_norm1d eval', lambda a, g, s: batch_norm1d(a, g, s, state.copy(), training=False),
         [normal(4, 3, 5), rng.uniform(0.5, 1.5, 3), normal(3)]),
        ('global_avg_pool', global_avg_pool, [normal(2, 3, 4)]),
        ('concat', lambda a, b: concat([a, b], axis=1), [normal(2, 1, 3), normal(2, 2, 3)]),
        ('split_channels', lambda a: split_channels(a, [2, 1])[0], [normal(2, 3, 2)]),
        ('log_softmax', log_softmax, [normal(3, 5)]),
        ('softmax_cross_entropy', lambda z: softmax_cross_entropy(z, one_hot), [normal(5, 4)]),
        ('mse', mse, [normal(3, 2), normal(3, 2)]),
        ('rfft', lambda a: real_fft(a).real + real_fft(a).imag, [normal(2, 8)]),
        ('rfft n=9', lambda a: real_fft(a).imag, [normal(3, 9)]),
        ('irfft', lambda re, im: _irfft(re, im, 8), [normal(2, 5), normal(2, 5)]),
    ])
    return cases


def _irfft(real: Tensor, imag: Tensor, length: int) -> Tensor:
    return inverse_real_fft(ComplexSpectrum(real, imag, length))


def _encoder_check(seed: int, fraction: float) -> Check:
    """
    Finite differences of a small encoder's multitask loss on a random
    sample of its scalar parameters
    """
    cfg = EncoderConfig(in_channels=3, window_length=12, num_classes=3, width=8, n_blocks=2,
                        embed_dim=4, stem_kernel_size=3)
    rng = make_rng(seed, 'verify/encoder')
    x = rng.standard_normal((4, cfg.in_channels, cfg.window_length))
    one_hot = np.eye(cfg.num_classes)[[0, 1, 2, 1]]
    targets = rng.standard_normal((4, cfg.embed_dim))
    train_cfg = TrainConfig()
    params = init_params(cfg, seed)

    def loss_of(tree) -> Tensor:
        fresh = map_leaves(tree, lambda name, leaf: leaf.copy() if isinstance(leaf, NormState)
                           else leaf)
        logits, embedding, _ = encoder_forward(Tensor(x), fresh, cfg, training=True)
        return multitask_loss(logits, embedding, one_hot, targets, train_cfg)[0]

    zero_grads(params)
    backward(loss_of(params))
    flat = [(name, index) for name, tensor in named_parameters(params)
            for index in np.ndindex(tensor.shape)]
    count = max(10, int(len(flat) * fraction))
    chosen = rng.choice(len(flat), size=min(count, len(flat)), replace=False)
    grads = dict((name, tensor.grad_or_zero()) for name, tensor in named_parameters(params))

    def shifted(target: str, index: tuple, delta: float):
        def shift(name, leaf):
            if name != target:
                return leaf
            data = leaf.data.copy()
            data[index] += delta
            return Tensor(data)
        return map_leaves(params, shift)

    analytic, numeric = [], []
    with no_grad():
        for position in chosen:
            name, index = flat[position]
            plus = loss_of(shifted(name, index, DEFAULT_STEP)).item()
            minus = loss_of(shifted(name, index, -DEFAULT_STEP)).item()
            numeric.append((plus - minus) / (2.0 * DEFAULT_STEP))
            analytic.append(grads[name][index])
    error = relative_error(np.array(analytic), np.array(numeric))
    return Check('gradcheck', 'encoder ({} of {} params)'.format(len(chosen), len(flat)),
                 error, DEFAULT_TOLERANCE)


def gradcheck_suite(seed: int = 0, fraction: float = 0.01) -> List[Check]:
    """ Central differences for every op on random shapes, then the whole encoder """
    rng = make_rng(seed, 'verify/gradcheck')
    checks = []
    for name, fn, arrays in _op_cases(rng):
        result = gradcheck(fn, arrays, seed=seed)
        checks.append(Check('gradcheck', name, result.max_error, result.tolerance))
    checks.append(_encoder_check(seed, fraction))
    return checks


def metrics_suite(seed: int = 0) -> List[Check]:
    """ confusion and macro scores against scikit-learn on random predictions """
    rng = make_rng(seed, 'verify/metrics')
    checks = []
    for k in (2, 5, 12):
        labels = rng.integers(0, k, 300)
        preds = np.where(rng.random(300) < 0.6, labels, rng.integers(0, k, 300))
        cm = confusion(preds, labels, k)
        reference = confusion_matrix(labels, preds, labels=list(range(k)))
        checks.append(Check('metrics', 'confusion k={}'.format(k),
                            float(np.abs(cm.counts - reference).max()), 0.5))
        report = metrics(cm)
        precision, recall, f1, _ = precision_recall_fscore_support(
            labels, preds, labels=list(range(k)), average='macro', zero_division=0)
        error = max(abs(report.macro_precision - precision), abs(report.macro_recall - recall),
                    abs(report.macro_f1 - f1), abs(accuracy(cm) - np.mean(preds == labels)))
        checks.append(Check('metrics', 'macro k={}'.format(k), float(error), METRICS_TOLERANCE))
    return checks


SUITE_FUNCTIONS: Dict[str, Callable[[int], List[Check]]] = {
    'fft': fft_suite,
    'gradcheck': gradcheck_suite,
    'metrics': metrics_suite,
}


def run_suites(suites: Sequence[str], seed: int = 0) -> VerifyReport:
    """
    :param suites: names from SUITES, or ['all']
    :return: VerifyReport of every check
    """
    selected = list(SUITES) if 'all' in suites else list(suites)
    checks: List[Check] = []
    for suite in selected:
        if suite not in SUITE_FUNCTIONS:
            raise ConfigError('Unknown verification suite {}'.format(suite))
        logger.info('Running %s suite ...', suite)
        suite_checks = SUITE_FUNCTIONS[suite](seed)
        failed = sum(not check.passed for check in suite_checks)
        logger.info('%s: %d checks, %d failed', suite, len(suite_checks), failed)
        checks.extend(suite_checks)
    return VerifyReport(checks)


def format_report(report: VerifyReport) -> str:
    rows = [[c.suite, c.name, '{:.2e}'.format(c.error), '{:.0e}'.format(c.tolerance),
             'ok' if c.passed else 'FAIL'] for c in report.checks]
    return tabulate(rows, headers=REPORT_COLUMNS)
