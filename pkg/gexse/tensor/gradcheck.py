"""
Central finite-difference checks of autodiff gradients
"""
import logging
from typing import Callable, List, NamedTuple, Sequence

import numpy as np

from gexse.misc import make_rng
from gexse.tensor.core import Tensor, backward, no_grad

logger = logging.getLogger(__name__)

DEFAULT_STEP = 1e-5
DEFAULT_TOLERANCE = 1e-4


class GradcheckResult(NamedTuple):
    errors: List[float]
    tolerance: float

    @property
    def max_error(self) -> float:
        return max(self.errors) if self.errors else 0.0

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """ ‖a − n‖ / max(‖a‖, ‖n‖), 0 when both vanish """
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric))
    if scale < 1e-12:
        return 0.0
    return float(np.linalg.norm(analytic - numeric) / scale)


def numeric_gradient(fn: Callable[..., Tensor], arrays: Sequence[np.ndarray], index: int,
                     step: float = DEFAULT_STEP) -> np.ndarray:
    """
    Central differences of the scalar fn(*arrays) w.r.t. arrays[index]
    :param fn: maps tensors to a scalar tensor
    :param arrays: inputs as plain arrays
    :param index: position of the input to differentiate
    :param step: perturbation h
    :return: array shaped like arrays[index]
    """
    inputs = [np.array(a, dtype=np.float64) for a in arrays]
    target = inputs[index]
    grad = np.zeros_like(target)
    with no_grad():
        for position in np.ndindex(target.shape):
            original = target[position]
            target[position] = original + step
            plus = fn(*[Tensor(a) for a in inputs]).item()
            target[position] = original - step
            minus = fn(*[Tensor(a) for a in inputs]).item()
            target[position] = original
            grad[position] = (plus - minus) / (2.0 * step)
    return grad


def gradcheck(fn: Callable[..., Tensor], arrays: Sequence[np.ndarray], seed: int = 0,
              step: float = DEFAULT_STEP, tolerance: float = DEFAULT_TOLERANCE) -> GradcheckResult:
    """
    Compares autodiff and finite-difference gradients of fn for every input.
    Non-scalar outputs are reduced with a fixed random weighting so the whole
    Jacobian is exercised.
    :return: GradcheckResult with one relative error per input
    """
    arrays = [np.asarray(a, dtype=np.float64) for a in arrays]
    probe = fn(*[Tensor(a) for a in arrays])
    weights = make_rng(seed, 'gradcheck').standard_normal(probe.shape)

    def scalar_fn(*tensors: Tensor) -> Tensor:
        return (fn(*tensors) * weights).sum()

    leaves = [Tensor(a, requires_grad=True) for a in arrays]
    backward(scalar_fn(*leaves))
    errors = []
    for index, leaf in enumerate(leaves):
        numeric = numeric_gradient(scalar_fn, arrays, index, step)
        errors.append(relative_error(leaf.grad_or_zero(), numeric))
    result = GradcheckResult(errors=errors, tolerance=tolerance)
    logger.debug('gradcheck errors %s', errors)
    return result
