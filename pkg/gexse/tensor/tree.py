"""
Named access to parameter trees.

A parameter tree is built from NamedTuples and tuples whose leaves are
trainable Tensors or NormState running statistics.
"""
from typing import Any, Callable, Dict, Iterator, List, Tuple

import numpy as np

from gexse.misc import DataError
from gexse.tensor.core import Tensor
from gexse.tensor.ops import NormState


def _join(prefix: str, name: str) -> str:
    return '{}.{}'.format(prefix, name) if prefix else name


def named_leaves(tree: Any, prefix: str = '') -> Iterator[Tuple[str, Any]]:
    """ Depth-first (name, leaf) pairs in declaration order """
    if isinstance(tree, (Tensor, NormState)):
        yield prefix, tree
    elif hasattr(tree, '_fields'):
        for field in tree._fields:
            yield from named_leaves(getattr(tree, field), _join(prefix, field))
    elif isinstance(tree, (tuple, list)):
        for index, item in enumerate(tree):
            yield from named_leaves(item, _join(prefix, str(index)))


def map_leaves(tree: Any, fn: Callable[[str, Any], Any], prefix: str = '') -> Any:
    """ Rebuilds tree with every leaf replaced by fn(name, leaf) """
    if isinstance(tree, (Tensor, NormState)):
        return fn(prefix, tree)
    if hasattr(tree, '_fields'):
        return type(tree)(*[map_leaves(getattr(tree, field), fn, _join(prefix, field))
                            for field in tree._fields])
    if isinstance(tree, (tuple, list)):
        return type(tree)(map_leaves(item, fn, _join(prefix, str(index)))
                          for index, item in enumerate(tree))
    return tree


def named_parameters(tree: Any) -> List[Tuple[str, Tensor]]:
    return [(name, leaf) for name, leaf in named_leaves(tree) if isinstance(leaf, Tensor)]


def named_norms(tree: Any) -> List[Tuple[str, NormState]]:
    return [(name, leaf) for name, leaf in named_leaves(tree) if isinstance(leaf, NormState)]


def count_parameters(tree: Any) -> int:
    return sum(tensor.size for _, tensor in named_parameters(tree))


def zero_grads(tree: Any) -> None:
    for _, tensor in named_parameters(tree):
        tensor.zero_grad()


def state_arrays(tree: Any) -> Dict[str, np.ndarray]:
    """ Flat name -> array of every parameter and running statistic """
    arrays: Dict[str, np.ndarray] = {}
    for name, leaf in named_leaves(tree):
        if isinstance(leaf, Tensor):
            arrays[name] = leaf.data
        else:
            arrays[name + '.running_mean'] = leaf.running_mean
            arrays[name + '.running_var'] = leaf.running_var
    return arrays


def _checked(arrays: Dict[str, np.ndarray], name: str, shape: Tuple[int, ...]) -> np.ndarray:
    if name not in arrays:
        raise DataError('Missing tensor {}'.format(name))
    value = arrays[name]
    if value.shape != shape:
        raise DataError('Tensor {} has shape {}, expected {}'.format(name, value.shape, shape))
    return value


def load_state_arrays(tree: Any, arrays: Dict[str, np.ndarray]) -> Any:
    """
    Inverse of state_arrays on a tree of matching structure
    :return: new tree with trainable tensors and fresh NormState copies
    """
    expected = set(state_arrays(tree))
    unexpected = sorted(set(arrays) - expected)
    if unexpected:
        raise DataError('Unexpected tensor {}'.format(unexpected[0]))

    def load(name: str, leaf: Any) -> Any:
        if isinstance(leaf, Tensor):
            return Tensor(_checked(arrays, name, leaf.shape), requires_grad=True, name=name)
        return NormState(
            _checked(arrays, name + '.running_mean', leaf.running_mean.shape),
            _checked(arrays, name + '.running_var', leaf.running_var.shape),
        )

    return map_leaves(tree, load)


def copy_tree(tree: Any) -> Any:
    """ Snapshot with independent running statistics """
    return map_leaves(tree, lambda name, leaf: leaf.copy() if isinstance(leaf, NormState) else leaf)
