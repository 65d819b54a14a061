"""
Real FFT pair with gradients.

Convention: the forward transform is unnormalized, the inverse carries 1/n.
numpy's pocketfft decomposes any length (mixed radix, Bluestein for large
prime factors), so windows of 90 samples are transformed at their exact length.
"""
import logging
from typing import NamedTuple

import numpy as np
from cachetools import LRUCache, cached

from gexse.misc import ShapeError
from gexse.tensor.core import Tensor, TensorLike, as_tensor, make_node

logger = logging.getLogger(__name__)


class ComplexSpectrum(NamedTuple):
    """ Half-spectrum of a real signal along the last axis """
    real: Tensor
    imag: Tensor
    original_length: int


@cached(cache=LRUCache(maxsize=64))
def hermitian_weights(length: int) -> np.ndarray:
    """
    Weight of every half-spectrum bin in the full spectrum's energy:
    1 for DC (and Nyquist when length is even), 2 for the mirrored bins
    """
    weights = np.full(length // 2 + 1, 2.0)
    weights[0] = 1.0
    if length % 2 == 0:
        weights[-1] = 1.0
    weights.setflags(write=False)
    return weights


def real_fft(x: TensorLike) -> ComplexSpectrum:
    """
    Half-spectrum of x along its last axis
    :param x: real tensor, last axis of length n >= 2
    :return: ComplexSpectrum with bins n//2 + 1
    """
    x = as_tensor(x)
    if x.ndim < 1 or x.shape[-1] < 2:
        raise ShapeError('real_fft needs at least 2 samples on the last axis, got {}'.format(
            x.shape))
    length = x.shape[-1]
    spectrum = np.fft.rfft(x.data, axis=-1)
    adjoint = length / hermitian_weights(length)

    def real_backward(g: np.ndarray):
        return (np.fft.irfft(adjoint * g, n=length, axis=-1),)

    def imag_backward(g: np.ndarray):
        return (np.fft.irfft(adjoint * (1j * g), n=length, axis=-1),)

    return ComplexSpectrum(
        real=make_node(spectrum.real, (x,), real_backward, 'rfft.real'),
        imag=make_node(spectrum.imag, (x,), imag_backward, 'rfft.imag'),
        original_length=length,
    )


def inverse_real_fft(s: ComplexSpectrum) -> Tensor:
    """
    Real signal of s.original_length samples whose half-spectrum is s.
    The imaginary parts of the DC and Nyquist bins do not contribute.
    """
    real, imag = as_tensor(s.real), as_tensor(s.imag)
    length = int(s.original_length)
    bins = length // 2 + 1
    if real.shape != imag.shape or real.ndim < 1 or real.shape[-1] != bins or length < 2:
        raise ShapeError('inverse_real_fft: spectrum {} / {} inconsistent with length {}'.format(
            real.shape, imag.shape, length))
    signal = np.fft.irfft(real.data + 1j * imag.data, n=length, axis=-1)
    scale = hermitian_weights(length) / length

    def backward(g: np.ndarray):
        spectrum = np.fft.rfft(g, axis=-1)
        return scale * spectrum.real, scale * spectrum.imag

    return make_node(signal, (real, imag), backward, 'irfft')


def naive_dft(x: np.ndarray) -> np.ndarray:
    """
    O(n²) half-spectrum of x along its last axis, reference for real_fft
    :return: complex array
    """
    x = np.asarray(x, dtype=np.float64)
    length = x.shape[-1]
    k = np.arange(length // 2 + 1)[:, None]
    n = np.arange(length)[None, :]
    basis = np.exp(-2j * np.pi * ((k * n) % length) / length)
    return x @ basis.T


def spectral_energy(s: ComplexSpectrum) -> np.ndarray:
    """
    (1/n)·Σ w_k |X_k|² along the last axis, equal to Σ x² by Parseval
    """
    power = s.real.data ** 2 + s.imag.data ** 2
    return (power * hermitian_weights(s.original_length)).sum(axis=-1) / s.original_length
