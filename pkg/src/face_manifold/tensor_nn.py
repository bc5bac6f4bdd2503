"""Hand-written 1D network kernels with exact backward passes.

Feature maps are float64 arrays shaped ``(channels, length)`` or, for a
batch, ``(batch, channels, length)``.  Every kernel accepts either form and
returns the same rank it was given.

Convolutions are stride 1 with zero padding ``(K - 1) // 2``, so they keep
the length.  Pooling is window 2 / stride 2 with floor semantics: the last
element of an odd-length input is never pooled, and it gets zero gradient
and zero unpooled value.
"""
from dataclasses import dataclass

import numpy as np


def _batched(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        return x[None], True
    if x.ndim == 3:
        return x, False
    raise ValueError(f"feature map must be (C, L) or (B, C, L), got shape {x.shape}")


def _unbatch(a, squeeze):
    return a[0] if squeeze else a


@dataclass(eq=False)
class ConvKernel:
    """Weights ``(O, I, K)`` plus bias.

    A regular kernel maps I -> O channels with bias length O.  A transposed
    kernel uses the same weight layout but runs the adjoint map O -> I, so
    its bias has length I.
    """
    weights: np.ndarray
    bias: np.ndarray
    transposed: bool = False

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64).reshape(-1)
        if self.weights.ndim != 3:
            raise ValueError(f"weights must be (O, I, K), got shape {self.weights.shape}")
        if self.kernel_size % 2 == 0:
            raise ValueError(f"kernel size must be odd, got {self.kernel_size}")
        expected = self.in_channels if self.transposed else self.out_channels
        if self.bias.size != expected:
            raise ValueError(f"bias length {self.bias.size}, expected {expected}")

    @property
    def out_channels(self):
        return self.weights.shape[0]

    @property
    def in_channels(self):
        return self.weights.shape[1]

    @property
    def kernel_size(self):
        return self.weights.shape[2]

    @property
    def padding(self):
        return (self.kernel_size - 1) // 2


# --- convolution ---------------------------------------------------------------

def _im2col(x, k, pad):
    # (B, I, L) -> (B, L, I*K) with cols[b, t, i*K + kk] = x_padded[b, i, t + kk]
    b, i, length = x.shape
    xt = x.transpose(0, 2, 1)
    cols = np.zeros((b, length, i, k))
    for kk in range(k):
        s = kk - pad
        lo, hi = max(0, -s), min(length, length - s)
        if lo < hi:
            cols[:, lo:hi, :, kk] = xt[:, lo + s : hi + s, :]
    return cols.reshape(b, length, i * k)


def _col2im(grad_cols, channels, k, pad):
    b, length, _ = grad_cols.shape
    g = grad_cols.reshape(b, length, channels, k)
    gx = np.zeros((b, length, channels))
    for kk in range(k):
        s = kk - pad
        lo, hi = max(0, -s), min(length, length - s)
        if lo < hi:
            gx[:, lo + s : hi + s, :] += g[:, lo:hi, :, kk]
    return gx.transpose(0, 2, 1)


def _conv(x, w, bias, pad):
    o, i, k = w.shape
    cols = _im2col(x, k, pad)
    out = cols @ w.reshape(o, i * k).T  # (B, L, O)
    return out.transpose(0, 2, 1) + bias[None, :, None]


def _conv_grads(x, w, grad_out, pad):
    o, i, k = w.shape
    cols = _im2col(x, k, pad)
    b, length, _ = cols.shape
    g = grad_out.transpose(0, 2, 1)  # (B, L, O)
    grad_w = (g.reshape(b * length, o).T @ cols.reshape(b * length, i * k)).reshape(o, i, k)
    grad_b = grad_out.sum(axis=(0, 2))
    grad_x = _col2im(g @ w.reshape(o, i * k), i, k, pad)
    return grad_x, grad_w, grad_b


def conv1d_forward(x, kernel):
    """``out[o, t] = bias[o] + sum_{i,k} w[o, i, k] * x_padded[i, t + k]``."""
    xb, squeeze = _batched(x)
    if kernel.transposed:
        raise ValueError("conv1d_forward needs a regular (non-transposed) kernel")
    if xb.shape[1] != kernel.in_channels:
        raise ValueError(
            f"input has {xb.shape[1]} channels, kernel expects {kernel.in_channels}"
        )
    return _unbatch(_conv(xb, kernel.weights, kernel.bias, kernel.padding), squeeze)


def conv1d_backward(x, kernel, grad_out):
    """Gradients ``(grad_x, grad_w, grad_b)`` of ``sum(out * grad_out)``."""
    xb, squeeze = _batched(x)
    gb, _ = _batched(grad_out)
    if gb.shape != (xb.shape[0], kernel.out_channels, xb.shape[2]):
        raise ValueError(
            f"grad_out shape {np.shape(grad_out)} does not match forward output "
            f"({kernel.out_channels}, {xb.shape[2]})"
        )
    grad_x, grad_w, grad_b = _conv_grads(xb, kernel.weights, gb, kernel.padding)
    return _unbatch(grad_x, squeeze), grad_w, grad_b


# The adjoint of a stride-1 "same" convolution is a convolution with the
# kernel flipped in time and its channel axes swapped.
def _adjoint_weights(w):
    return np.ascontiguousarray(w[:, :, ::-1].transpose(1, 0, 2))


def tconv1d_forward(y, kernel):
    """Transposed convolution: adjoint of ``conv1d_forward`` plus a bias per output channel."""
    yb, squeeze = _batched(y)
    if not kernel.transposed:
        raise ValueError("tconv1d_forward needs a transposed kernel")
    if yb.shape[1] != kernel.out_channels:
        raise ValueError(
            f"input has {yb.shape[1]} channels, transposed kernel expects {kernel.out_channels}"
        )
    out = _conv(yb, _adjoint_weights(kernel.weights), kernel.bias, kernel.padding)
    return _unbatch(out, squeeze)


def tconv1d_backward(y, kernel, grad_out):
    yb, squeeze = _batched(y)
    gb, _ = _batched(grad_out)
    if gb.shape != (yb.shape[0], kernel.in_channels, yb.shape[2]):
        raise ValueError(
            f"grad_out shape {np.shape(grad_out)} does not match forward output "
            f"({kernel.in_channels}, {yb.shape[2]})"
        )
    grad_y, grad_wt, grad_b = _conv_grads(yb, _adjoint_weights(kernel.weights), gb, kernel.padding)
    # undo the flip/transpose to express the gradient in the stored layout
    grad_w = np.ascontiguousarray(grad_wt.transpose(1, 0, 2)[:, :, ::-1])
    return _unbatch(grad_y, squeeze), grad_w, grad_b


# --- pooling ---------------------------------------------------------------------

@dataclass(eq=False)
class PoolRecord:
    """Argmax positions (into the pre-pool input) for every pooled cell."""
    pre_length: int
    indices: np.ndarray

    @property
    def pooled_length(self):
        return self.indices.shape[-1]


def _window_pick(record, shape):
    """Offset (0/1) of each index inside its window, or None if not window-aligned."""
    idx = np.asarray(record.indices)
    idx = idx[None] if idx.ndim == 2 else idx
    if idx.shape != shape:
        raise ValueError(f"shape {shape} does not match pool record {idx.shape}")
    pick = idx - 2 * np.arange(idx.shape[2])
    if np.all((pick == 0) | (pick == 1)) and 2 * idx.shape[2] <= record.pre_length:
        return idx, pick.astype(bool)
    return idx, None


def maxpool1d_forward(x):
    """Window-2, stride-2 max pooling; ties go to the lower index."""
    xb, squeeze = _batched(x)
    length = xb.shape[2]
    if length < 2:
        raise ValueError(f"max pooling needs length >= 2, got {length}")
    n = length // 2
    first, second = xb[:, :, 0 : 2 * n : 2], xb[:, :, 1 : 2 * n : 2]
    pick = second > first  # strict: a tie keeps the lower index
    out = np.where(pick, second, first)
    indices = 2 * np.arange(n) + pick
    return _unbatch(out, squeeze), PoolRecord(length, _unbatch(indices, squeeze))


def _scatter(values, record, idx, pick):
    b, c, n = values.shape
    out = np.zeros((b, c, record.pre_length))
    if pick is not None:
        out[:, :, 0 : 2 * n : 2] = np.where(pick, 0.0, values)
        out[:, :, 1 : 2 * n : 2] = np.where(pick, values, 0.0)
    else:
        np.put_along_axis(out, idx, values, axis=2)
    return out


def _gather(grad, idx, pick):
    n = idx.shape[2]
    if pick is not None:
        return np.where(pick, grad[:, :, 1 : 2 * n : 2], grad[:, :, 0 : 2 * n : 2])
    return np.take_along_axis(grad, idx, axis=2)


def maxpool1d_backward(record, grad_out):
    gb, squeeze = _batched(grad_out)
    idx, pick = _window_pick(record, gb.shape)
    return _unbatch(_scatter(gb, record, idx, pick), squeeze)


def maxunpool1d_forward(x, record):
    """Place each value at its recorded argmax position; zeros elsewhere."""
    xb, squeeze = _batched(x)
    idx, pick = _window_pick(record, xb.shape)
    if pick is None and idx.size and (idx.min() < 0 or idx.max() >= record.pre_length):
        raise ValueError(
            f"pool record index out of range [0, {record.pre_length}): "
            f"[{idx.min()}, {idx.max()}]"
        )
    return _unbatch(_scatter(xb, record, idx, pick), squeeze)


def maxunpool1d_backward(record, grad_out):
    gb, squeeze = _batched(grad_out)
    if gb.shape[2] != record.pre_length:
        raise ValueError(f"grad_out length {gb.shape[2]} does not match pool record {record.pre_length}")
    idx, pick = _window_pick(record, gb.shape[:2] + (record.pooled_length,))
    return _unbatch(_gather(gb, idx, pick), squeeze)


# --- activation / loss -------------------------------------------------------------

def relu_forward(x):
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


def relu_backward(x, grad_out):
    """Gradient masked by ``x > 0`` (zero at the kink)."""
    return np.where(np.asarray(x) > 0, grad_out, 0.0)


def mse_loss(pred, target):
    """Mean squared error over all elements and its gradient w.r.t. ``pred``."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs target {target.shape}")
    diff = pred - target
    m = diff.size
    return float(np.sum(diff * diff) / m), (2.0 / m) * diff


# --- Adam --------------------------------------------------------------------------

@dataclass(eq=False)
class AdamState:
    m: list
    v: list
    t: int = 0
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params, **hyper):
        return cls([np.zeros_like(p, dtype=np.float64) for p in params],
                   [np.zeros_like(p, dtype=np.float64) for p in params], **hyper)


def adam_step(params, grads, state):
    """One bias-corrected Adam update.

    Returns ``(new_params, new_state)``; the inputs are left untouched.
    """
    if not (len(params) == len(grads) == len(state.m) == len(state.v)):
        raise ValueError(
            f"parameter/gradient/state counts differ: {len(params)}, {len(grads)}, "
            f"{len(state.m)}, {len(state.v)}"
        )
    t = state.t + 1
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    new_params, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if np.shape(p) != np.shape(g) or np.shape(p) != np.shape(m):
            raise ValueError(f"size mismatch: param {np.shape(p)}, grad {np.shape(g)}")
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * (g * g)
        new_params.append(p - state.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + state.eps))
        new_m.append(m)
        new_v.append(v)
    return new_params, AdamState(new_m, new_v, t, state.learning_rate,
                                 state.beta1, state.beta2, state.eps)
