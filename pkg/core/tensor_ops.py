"""Convolution, concatenation and activation primitives with their gradients.

Tensors are plain numpy arrays. Activations are laid out ``[C, H, W]``
(channels, time frames, frequency bins) and may carry a leading batch axis
``[B, C, H, W]``; filter banks are ``[C_out, C_in, a, b]``.

Convolution is cross-correlation with stride 1 and zero "same" padding anchored
at ``(a // 2, b // 2)``, so even-sized kernels pad one extra row/column at the
trailing edge. The direct path is the correctness reference; the FFT path is
an equivalent execution strategy for large kernels.
"""
import logging
from typing import List, Sequence, Tuple, Union

import numpy as np
from scipy import fft as sp_fft

from .errors import ShapeError
from .schemas import Precision

logger = logging.getLogger(__name__)

DTYPES = {
    Precision.f32: np.float32,
    Precision.f64: np.float64,
}

# Kernels with more taps than this go through the FFT path under method='auto'.
FFT_TAPS_THRESHOLD = 16


def resolve_dtype(precision: Union[Precision, str]) -> np.dtype:
    return np.dtype(DTYPES[Precision(precision)])


def check_tensor(x: np.ndarray, ndim: int, name: str = 'tensor') -> None:
    if x.ndim != ndim:
        raise ShapeError(f'{name} must have {ndim} dimensions, got shape {x.shape}')
    if x.size == 0 or min(x.shape) < 1:
        raise ShapeError(f'{name} is empty: shape {x.shape}')


def _as_batch(x: np.ndarray) -> Tuple[np.ndarray, bool]:
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise ShapeError(f'activation must be [C,H,W] or [B,C,H,W], got shape {x.shape}')


def _check_conv_args(x: np.ndarray, filters: np.ndarray, bias: np.ndarray) -> None:
    check_tensor(x, 4, 'input')
    check_tensor(filters, 4, 'filters')
    if filters.shape[1] != x.shape[1]:
        raise ShapeError(
            f'channel mismatch: filters expect {filters.shape[1]} input channels, input has {x.shape[1]}'
        )
    if bias.shape != (filters.shape[0],):
        raise ShapeError(f'bias must have shape ({filters.shape[0]},), got {bias.shape}')


def _pad_same(x: np.ndarray, a: int, b: int) -> np.ndarray:
    p, q = a // 2, b // 2
    return np.pad(x, ((0, 0), (0, 0), (p, a - 1 - p), (q, b - 1 - q)))


def _pick_method(method: str, filters: np.ndarray) -> str:
    if method == 'auto':
        return 'fft' if filters.shape[2] * filters.shape[3] > FFT_TAPS_THRESHOLD else 'direct'
    if method not in ('direct', 'fft'):
        raise ValueError(f'unknown convolution method: {method}')
    return method


def _spectral_product(kind: str, af: np.ndarray, bf: np.ndarray) -> np.ndarray:
    """Per-frequency channel contraction of two spectra, batched through matmul.

    ``forward``:  [B,C,h,w] x [O,C,h,w] -> [B,O,h,w]
    ``input``:    [B,O,h,w] x [O,C,h,w] -> [B,C,h,w]
    ``filters``:  [B,C,h,w] x [B,O,h,w] -> [O,C,h,w]
    """
    if kind == 'forward':
        prod = np.matmul(af.transpose(2, 3, 0, 1), bf.transpose(2, 3, 1, 0))
    elif kind == 'input':
        prod = np.matmul(af.transpose(2, 3, 0, 1), bf.transpose(2, 3, 0, 1))
    else:
        prod = np.matmul(bf.transpose(2, 3, 1, 0), af.transpose(2, 3, 0, 1))
    return prod.transpose(2, 3, 0, 1)


def _full_conv(x: np.ndarray, k: np.ndarray, shape: Tuple[int, int], kind: str) -> np.ndarray:
    """Full 2D linear convolution over the trailing two axes, channels contracted per ``kind``."""
    fh = sp_fft.next_fast_len(shape[0], real=True)
    fw = sp_fft.next_fast_len(shape[1], real=True)
    xf = sp_fft.rfft2(x, s=(fh, fw))
    kf = sp_fft.rfft2(k, s=(fh, fw))
    out = sp_fft.irfft2(_spectral_product(kind, xf, kf), s=(fh, fw))
    return out[..., :shape[0], :shape[1]].astype(x.dtype, copy=False)


def conv2d_same(
    x: np.ndarray,
    filters: np.ndarray,
    bias: np.ndarray,
    method: str = 'auto',
) -> np.ndarray:
    """Stride-1 zero-padded cross-correlation; output keeps the input's H×W."""
    xb, squeeze = _as_batch(x)
    _check_conv_args(xb, filters, bias)
    _, _, H, W = xb.shape
    _, _, a, b = filters.shape
    xp = _pad_same(xb, a, b)

    if _pick_method(method, filters) == 'direct':
        # channels-last so each tap is one (B·H·W × C) @ (C × O) product
        xt = np.ascontiguousarray(xp.transpose(0, 2, 3, 1))
        acc = np.zeros((xb.shape[0], H, W, filters.shape[0]), dtype=xb.dtype)
        for u in range(a):
            for v in range(b):
                acc += np.tensordot(xt[:, u:u + H, v:v + W, :], filters[:, :, u, v], axes=([3], [1]))
        out = acc.transpose(0, 3, 1, 2)
    else:
        # valid correlation of the padded input == full convolution with the flipped kernel
        full = _full_conv(xp, filters[:, :, ::-1, ::-1], (H + 2 * a - 2, W + 2 * b - 2), 'forward')
        out = full[:, :, a - 1:a - 1 + H, b - 1:b - 1 + W]

    out = out + bias[None, :, None, None]
    return out[0] if squeeze else out


def conv2d_same_backward(
    x: np.ndarray,
    filters: np.ndarray,
    grad_output: np.ndarray,
    method: str = 'auto',
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of sum(conv2d_same(x) * grad_output) w.r.t. input, filters and bias.

    With a batch axis, filter and bias gradients are summed over the batch.
    """
    xb, squeeze = _as_batch(x)
    gb, _ = _as_batch(grad_output)
    _check_conv_args(xb, filters, np.zeros(filters.shape[0], dtype=filters.dtype))
    B, _, H, W = xb.shape
    C_out, _, a, b = filters.shape
    if gb.shape != (B, C_out, H, W):
        raise ShapeError(f'grad_output shape {gb.shape} does not match output shape {(B, C_out, H, W)}')
    p, q = a // 2, b // 2
    xp = _pad_same(xb, a, b)

    grad_bias = gb.sum(axis=(0, 2, 3))
    if _pick_method(method, filters) == 'direct':
        xt = np.ascontiguousarray(xp.transpose(0, 2, 3, 1))
        gt = np.ascontiguousarray(gb.transpose(0, 2, 3, 1))
        grad_filters = np.empty_like(filters)
        grad_xt = np.zeros_like(xt)
        for u in range(a):
            for v in range(b):
                window = xt[:, u:u + H, v:v + W, :]
                grad_filters[:, :, u, v] = np.tensordot(gt, window, axes=([0, 1, 2], [0, 1, 2]))
                grad_xt[:, u:u + H, v:v + W, :] += np.tensordot(gt, filters[:, :, u, v], axes=([3], [0]))
        grad_xp = grad_xt.transpose(0, 3, 1, 2)
    else:
        grad_xp = _full_conv(gb, filters, (H + a - 1, W + b - 1), 'input')
        full = _full_conv(xp, gb[:, :, ::-1, ::-1], (2 * H + a - 2, 2 * W + b - 2), 'filters')
        grad_filters = full[:, :, H - 1:H - 1 + a, W - 1:W - 1 + b].astype(filters.dtype, copy=False)

    grad_input = grad_xp[:, :, p:p + H, q:q + W]
    if squeeze:
        grad_input = grad_input[0]
    return np.ascontiguousarray(grad_input), np.ascontiguousarray(grad_filters), grad_bias


def concat_channels(parts: Sequence[np.ndarray]) -> np.ndarray:
    """Stack feature maps along the channel axis in list order."""
    if not parts:
        raise ShapeError('concat_channels needs at least one part')
    spatial = parts[0].shape[-2:]
    lead = parts[0].shape[:-3]
    for part in parts:
        if part.ndim != parts[0].ndim or part.shape[-2:] != spatial or part.shape[:-3] != lead:
            raise ShapeError(f'spatial mismatch in concat_channels: {part.shape} vs {parts[0].shape}')
    if len(parts) == 1:
        return parts[0].copy()
    return np.concatenate(parts, axis=-3)


def split_channels(x: np.ndarray, sizes: Sequence[int]) -> List[np.ndarray]:
    """Inverse of concat_channels for the given per-part channel counts."""
    if sum(sizes) != x.shape[-3]:
        raise ShapeError(f'channel sizes {list(sizes)} do not add up to {x.shape[-3]}')
    bounds = np.cumsum(sizes)[:-1]
    return np.split(x, bounds, axis=-3)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0).astype(x.dtype, copy=False)


def relu_backward(x: np.ndarray, grad_output: np.ndarray) -> np.ndarray:
    if x.shape != grad_output.shape:
        raise ShapeError(f'relu_backward shapes differ: {x.shape} vs {grad_output.shape}')
    # subgradient at exactly 0 is 0
    return np.where(x > 0, grad_output, 0).astype(grad_output.dtype, copy=False)
