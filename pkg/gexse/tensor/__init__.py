from gexse.tensor.core import Tape, Tensor, as_tensor, backward, no_grad  # noqa: F401
from gexse.tensor.ops import (  # noqa: F401
    NormState, affine, batch_norm1d, concat, concat_channels, conv1d, gelu,
    global_avg_pool, log_softmax, matmul, mse, relu, softmax_cross_entropy, split_channels
)
from gexse.tensor.spectral import ComplexSpectrum, inverse_real_fft, real_fft  # noqa: F401
