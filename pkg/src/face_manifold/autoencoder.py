"""Eight-layer symmetric 1D convolutional denoising autoencoder.

Encoder layer l: conv -> ReLU -> max-pool (indices kept).
Decoder layer j: max-unpool with the indices of encoder layer 5 - j ->
transposed conv -> ReLU, except the last transposed conv, which is linear
because the parameters being reconstructed are signed.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import binio
from ._rng import as_rng
from .tensor_nn import (
    ConvKernel,
    conv1d_backward,
    conv1d_forward,
    maxpool1d_backward,
    maxpool1d_forward,
    maxunpool1d_backward,
    maxunpool1d_forward,
    relu_backward,
    relu_forward,
    tconv1d_backward,
    tconv1d_forward,
)

WEIGHTS_MAGIC = b"FWT1"
CHANNEL_PLAN = (8, 16, 32, 64)
MIN_INPUT_LENGTH = 16
# Fixed sample-chunk size for batched work.  Thread count only changes which
# worker runs a chunk, never the chunk boundaries, so results stay bitwise
# identical across thread counts.
CHUNK = 32

_CONV, _TCONV = 0, 1


@dataclass(frozen=True)
class AutoencoderSpec:
    input_length: int
    channels: tuple = CHANNEL_PLAN
    kernel_size: int = 3
    pool_size: int = 2

    @property
    def lengths(self):
        """Input length of every encoder layer plus the bottleneck length."""
        out = [self.input_length]
        for _ in self.channels:
            out.append(out[-1] // self.pool_size)
        return out

    @property
    def bottleneck(self):
        return (self.channels[-1], self.lengths[-1])

    @property
    def layer_channels(self):
        """(in, out) channel pairs for the 4 encoder then 4 decoder layers."""
        plan = (1,) + tuple(self.channels)
        enc = [(plan[i], plan[i + 1]) for i in range(len(self.channels))]
        dec = [(o, i) for i, o in reversed(enc)]
        return enc + dec


def build(input_length):
    """Architecture descriptor for a given parameter-vector length."""
    input_length = int(input_length)
    if input_length < MIN_INPUT_LENGTH:
        raise ValueError(
            f"input length {input_length} too short: four 2x poolings need >= {MIN_INPUT_LENGTH}"
        )
    return AutoencoderSpec(input_length)


@dataclass(eq=False)
class AutoencoderWeights:
    spec: AutoencoderSpec
    encoder: list
    decoder: list

    def parameters(self):
        """Flat list ``[w1, b1, ..., w8, b8]`` in layer order."""
        out = []
        for k in self.encoder + self.decoder:
            out += [k.weights, k.bias]
        return out

    def with_parameters(self, params):
        params = list(params)
        n = len(self.encoder)
        layers = [
            ConvKernel(params[2 * i], params[2 * i + 1], transposed=i >= n)
            for i in range(len(params) // 2)
        ]
        return AutoencoderWeights(self.spec, layers[:n], layers[n:])

    @property
    def parameter_count(self):
        return sum(p.size for p in self.parameters())


def init_weights(spec, seed):
    """Glorot-uniform weights, zero biases."""
    rng = as_rng(seed)
    k = spec.kernel_size
    encoder, decoder = [], []
    for idx, (cin, cout) in enumerate(spec.layer_channels):
        bound = np.sqrt(6.0 / (cin * k + cout * k))
        if idx < len(spec.channels):
            w = rng.uniform(-bound, bound, (cout, cin, k))
            encoder.append(ConvKernel(w, np.zeros(cout)))
        else:
            # transposed layout: (channels consumed, channels produced, K)
            w = rng.uniform(-bound, bound, (cin, cout, k))
            decoder.append(ConvKernel(w, np.zeros(cout), transposed=True))
    return AutoencoderWeights(spec, encoder, decoder)


@dataclass(eq=False)
class ForwardTrace:
    enc_inputs: list = field(default_factory=list)
    enc_preact: list = field(default_factory=list)
    records: list = field(default_factory=list)
    dec_inputs: list = field(default_factory=list)
    dec_preact: list = field(default_factory=list)
    bottleneck: np.ndarray = None
    squeeze: bool = False


def _as_batch(inputs, length):
    x = np.asarray(inputs, dtype=np.float64)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None]
    if x.ndim != 2 or x.shape[1] != length:
        raise ValueError(f"input length {x.shape[-1]} does not match network input length {length}")
    return x[:, None, :], squeeze


def encode(weights, inputs):
    """Run the encoder on ``(B, L)`` or ``(L,)`` inputs; returns ``(bottleneck, trace)``."""
    h, squeeze = _as_batch(inputs, weights.spec.input_length)
    trace = ForwardTrace(squeeze=squeeze)
    for kernel in weights.encoder:
        trace.enc_inputs.append(h)
        z = conv1d_forward(h, kernel)
        trace.enc_preact.append(z)
        h, record = maxpool1d_forward(relu_forward(z))
        trace.records.append(record)
    trace.bottleneck = h
    return h, trace


def decode(weights, bottleneck, records, trace=None):
    """Run the decoder, consuming ``records`` in reverse encoder order."""
    h = bottleneck
    last = len(weights.decoder) - 1
    for j, kernel in enumerate(weights.decoder):
        u = maxunpool1d_forward(h, records[last - j])
        if trace is not None:
            trace.dec_inputs.append(u)
        z = tconv1d_forward(u, kernel)
        if j < last:
            if trace is not None:
                trace.dec_preact.append(z)
            h = relu_forward(z)
        else:
            h = z
    return h[:, 0, :]


def forward(weights, inputs):
    """Denoise one vector ``(L,)`` or a batch ``(B, L)``; returns ``(output, trace)``."""
    bottleneck, trace = encode(weights, inputs)
    out = decode(weights, bottleneck, trace.records, trace)
    return (out[0] if trace.squeeze else out), trace


def backward(weights, trace, grad_output):
    """Gradients for ``weights.parameters()`` given dLoss/dOutput."""
    g = np.asarray(grad_output, dtype=np.float64)
    g = g.reshape(-1, 1, weights.spec.input_length)
    n_dec = len(weights.decoder)
    dec_grads = [None] * n_dec
    for j in reversed(range(n_dec)):
        if j < n_dec - 1:
            g = relu_backward(trace.dec_preact[j], g)
        g, gw, gb = tconv1d_backward(trace.dec_inputs[j], weights.decoder[j], g)
        dec_grads[j] = (gw, gb)
        g = maxunpool1d_backward(trace.records[n_dec - 1 - j], g)
    n_enc = len(weights.encoder)
    enc_grads = [None] * n_enc
    for i in reversed(range(n_enc)):
        g = maxpool1d_backward(trace.records[i], g)
        g = relu_backward(trace.enc_preact[i], g)
        g, gw, gb = conv1d_backward(trace.enc_inputs[i], weights.encoder[i], g)
        enc_grads[i] = (gw, gb)
    out = []
    for gw, gb in enc_grads + dec_grads:
        out += [gw, gb]
    return out


def _chunks(n):
    return [(s, min(s + CHUNK, n)) for s in range(0, n, CHUNK)]


def _map_chunks(fn, n, threads):
    spans = _chunks(n)
    if threads > 1 and len(spans) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, spans))
    return [fn(s) for s in spans]


def denoise_batch(weights, inputs, threads=1):
    """Forward every input vector; output order follows input order."""
    x = np.asarray(inputs, dtype=np.float64)
    if x.size == 0:
        return np.zeros((0, weights.spec.input_length))
    if x.ndim != 2:
        raise ValueError(f"denoise_batch expects (count, L) inputs, got shape {x.shape}")
    parts = _map_chunks(lambda s: forward(weights, x[s[0]:s[1]])[0], len(x), threads)
    return np.concatenate(parts, axis=0)


def loss_and_gradients(weights, noisy, clean, threads=1):
    """Mean-squared-error loss over a batch and its parameter gradients.

    The batch is processed in fixed chunks whose gradients are summed in
    chunk order.
    """
    noisy = np.asarray(noisy, dtype=np.float64)
    clean = np.asarray(clean, dtype=np.float64)
    m = clean.size

    def work(span):
        a, b = span
        out, trace = forward(weights, noisy[a:b])
        diff = out - clean[a:b]
        grads = backward(weights, trace, (2.0 / m) * diff)
        return float(np.sum(diff * diff)), grads

    results = _map_chunks(work, len(noisy), threads)
    sq = 0.0
    total = None
    for s, grads in results:
        sq += s
        total = grads if total is None else [t + g for t, g in zip(total, grads)]
    return sq / m, total


# --- persistence ---------------------------------------------------------------

def weights_to_bytes(weights):
    w = binio.Writer(WEIGHTS_MAGIC)
    w.u32(weights.spec.input_length)
    layers = weights.encoder + weights.decoder
    w.u32(len(layers))
    for k in layers:
        if k.transposed:
            w.u32(k.in_channels)   # channels produced
            w.u32(k.out_channels)  # channels consumed
        else:
            w.u32(k.out_channels)
            w.u32(k.in_channels)
        w.u32(k.kernel_size)
        w.u8(_TCONV if k.transposed else _CONV)
        w.f64_array(k.weights)
        w.f64_array(k.bias)
    return w.getvalue()


def weights_from_bytes(data, input_length=None):
    r = binio.Reader(data, WEIGHTS_MAGIC, "weights (.fwt)")
    length = r.u32("header")
    if input_length is not None and length != input_length:
        raise binio.DimensionOverflowError(
            f"weights were trained for input length {length}, but {input_length} was requested"
        )
    try:
        spec = build(length)
    except ValueError as exc:
        raise binio.FileFormatError(str(exc)) from exc
    n_layers = r.u32("header")
    expected = spec.layer_channels
    if n_layers != len(expected):
        raise binio.FileFormatError(f"expected {len(expected)} layers, file has {n_layers}")
    layers = []
    for idx in range(n_layers):
        section = f"layer {idx + 1}"
        out_ch, in_ch, k = r.u32(section), r.u32(section), r.u32(section)
        kind = r.u8(section)
        if kind not in (_CONV, _TCONV):
            raise binio.FileFormatError(f"{section}: unknown layer type byte {kind}")
        if (in_ch, out_ch) != expected[idx] or k != spec.kernel_size:
            raise binio.DimensionOverflowError(
                f"{section}: shape {in_ch}->{out_ch} (K={k}) does not match "
                f"architecture {expected[idx][0]}->{expected[idx][1]} (K={spec.kernel_size})"
            )
        shape = (in_ch, out_ch, k) if kind == _TCONV else (out_ch, in_ch, k)
        w = r.f64_array(out_ch * in_ch * k, section + " weights").reshape(shape)
        b = r.f64_array(out_ch, section + " bias")
        layers.append(ConvKernel(w, b, transposed=kind == _TCONV))
    r.finish()
    n = len(spec.channels)
    if any(k.transposed for k in layers[:n]) or not all(k.transposed for k in layers[n:]):
        raise binio.FileFormatError("layer types must be 4 conv followed by 4 tconv")
    return AutoencoderWeights(spec, layers[:n], layers[n:])


def save_weights(weights, path):
    with open(path, "wb") as fh:
        fh.write(weights_to_bytes(weights))


def load_weights(path, input_length=None):
    with open(path, "rb") as fh:
        return weights_from_bytes(fh.read(), input_length)
