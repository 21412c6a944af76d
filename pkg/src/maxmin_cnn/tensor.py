"""Dense array primitives used by every layer.

Tensors are plain numpy arrays in canonical NCHW row-major layout
(2-D for matrices, 1-D for vectors). Operations here never mutate
their inputs; the optimizer is the only place parameters are updated
in place.
"""
import numpy as np

from .errors import ConfigError, ShapeError


def concat_channels(a, b):
    """Stack b's channels after a's. Both must agree on N, H, W."""
    if a.ndim != 4 or b.ndim != 4:
        raise ShapeError(f"concat_channels expects 4-D tensors, got {a.shape} and {b.shape}")
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ShapeError(f"concat_channels: incompatible shapes {a.shape} and {b.shape}")
    return np.concatenate([a, b], axis=1)


def negate(x):
    """Elementwise negation, same shape."""
    return -x


def matmul(a, b):
    """Matrix product with an inner-dimension check.

    Delegates to numpy's GEMM, which uses a fixed summation order for
    identical inputs, so repeated calls are bit-identical.
    """
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions disagree, {a.shape} x {b.shape}")
    return a @ b


def conv_out_size(size, k, stride, pad):
    """Output extent of a convolution along one spatial axis."""
    if k < 1 or stride < 1 or pad < 0:
        raise ConfigError(f"invalid convolution geometry k={k} stride={stride} pad={pad}")
    span = size + 2 * pad - k
    if span < 0 or span % stride != 0:
        raise ConfigError(
            f"non-integral output size for input {size}, kernel {k}, stride {stride}, pad {pad}"
        )
    return span // stride + 1


def im2col(x, kh, kw, stride, pad):
    """Lower NCHW input to a (C*kh*kw, N*Ho*Wo) patch matrix.

    Column j holds the receptive field of output position j, where j
    enumerates (n, ho, wo) in row-major order; padding contributes zeros.
    """
    n, c, h, w = x.shape
    ho = conv_out_size(h, kh, stride, pad)
    wo = conv_out_size(w, kw, stride, pad)
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    windows = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride]  # N, C, Ho, Wo, kh, kw
    cols = windows.transpose(1, 4, 5, 0, 2, 3).reshape(c * kh * kw, n * ho * wo)
    return np.ascontiguousarray(cols)


def col2im(cols, x_shape, kh, kw, stride, pad):
    """Adjoint of im2col: scatter-add columns back onto an NCHW canvas."""
    n, c, h, w = x_shape
    ho = conv_out_size(h, kh, stride, pad)
    wo = conv_out_size(w, kw, stride, pad)
    if cols.shape != (c * kh * kw, n * ho * wo):
        raise ShapeError(
            f"col2im: expected columns of shape {(c * kh * kw, n * ho * wo)}, got {cols.shape}"
        )
    xp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    blocks = cols.reshape(c, kh, kw, n, ho, wo)
    for i in range(kh):
        for j in range(kw):
            xp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += (
                blocks[:, i, j].transpose(1, 0, 2, 3)
            )
    if pad:
        xp = xp[:, :, pad:-pad, pad:-pad]
    return xp
