"""Dense MLP engine: ELU hidden layers, identity output, Adam, checkpoints.

Observation inputs are wide and mostly zero, so the first layer only touches
input columns that are nonzero somewhere in the batch.  Its weight gradient
is kept column-sparse (:class:`LayerGrad` with ``cols``) and Adam skips
columns that have never received a gradient: their moments are still zero,
so the dense update would leave them unchanged anyway.
"""

import io
import struct
from dataclasses import dataclass, field

import numba
import numpy as np

ELU_ALPHA = 1.0
MAGIC = b"MLP1"
# below this width the gather costs more than it saves
SPARSE_MIN_WIDTH = 256


def elu(z):
    return np.where(z > 0, z, ELU_ALPHA * np.expm1(np.minimum(z, 0.0)))


def elu_grad(z):
    return np.where(z > 0, 1.0, ELU_ALPHA * np.exp(np.minimum(z, 0.0)))


class MlpParams:
    """Weights ``[out x in]`` and biases ``[out]`` per layer."""

    def __init__(self, weights, biases):
        if len(weights) != len(biases) or not weights:
            raise ValueError("need matching, non-empty weight and bias lists")
        for k, (W, b) in enumerate(zip(weights, biases)):
            if W.ndim != 2 or b.shape != (W.shape[0],):
                raise ValueError(f"layer {k}: bad shapes {W.shape} / {b.shape}")
            if k and W.shape[1] != weights[k - 1].shape[0]:
                raise ValueError(f"layer {k}: input {W.shape[1]} does not chain "
                                 f"with previous output {weights[k - 1].shape[0]}")
        # first layer column-major: the sparse paths read and update whole input columns
        self.weights = [np.asfortranarray(W, dtype=np.float64) if k == 0 else
                        np.ascontiguousarray(W, dtype=np.float64) for k, W in enumerate(weights)]
        self.biases = [np.ascontiguousarray(b, dtype=np.float64) for b in biases]

    @classmethod
    def init(cls, sizes, rng):
        """Glorot-uniform weights, zero biases."""
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
            biases.append(np.zeros(fan_out))
        return cls(weights, biases)

    @classmethod
    def zeros(cls, sizes):
        return cls([np.zeros((o, i)) for i, o in zip(sizes[:-1], sizes[1:])],
                   [np.zeros(o) for o in sizes[1:]])

    @property
    def sizes(self):
        return [self.weights[0].shape[1]] + [W.shape[0] for W in self.weights]

    @property
    def in_width(self):
        return self.weights[0].shape[1]

    @property
    def out_width(self):
        return self.weights[-1].shape[0]

    def arrays(self):
        for W, b in zip(self.weights, self.biases):
            yield W
            yield b

    def copy(self):
        return MlpParams([W.copy() for W in self.weights], [b.copy() for b in self.biases])

    def copy_from(self, other):
        for dst, src in zip(self.arrays(), other.arrays()):
            dst[...] = src

    def num_params(self):
        return sum(a.size for a in self.arrays())

    def equals(self, other):
        return len(self.weights) == len(other.weights) and all(
            a.shape == b.shape and a.tobytes() == b.tobytes()
            for a, b in zip(self.arrays(), other.arrays()))


@dataclass
class Tape:
    inputs: list  # activation entering each layer (first one possibly column-gathered)
    pre: list  # pre-activations
    cols: np.ndarray = None  # active input columns of layer 0, None means all
    squeeze: bool = False


@dataclass
class LayerGrad:
    W: np.ndarray  # [out x len(cols)] when cols is set, else full shape
    b: np.ndarray
    cols: np.ndarray = None

    def dense_W(self, shape):
        if self.cols is None:
            return self.W
        out = np.zeros(shape)
        out[:, self.cols] = self.W
        return out


def forward(p, x):
    """Returns ``(y, tape)``; ``x`` may be one vector or a batch of rows."""
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    X = x[None, :] if squeeze else x
    if X.shape[1] != p.in_width:
        raise ValueError(f"input width {X.shape[1]} != network input {p.in_width}")
    cols = None
    W0 = p.weights[0]
    if X.shape[1] >= SPARSE_MIN_WIDTH:
        cols = np.flatnonzero(np.any(X != 0.0, axis=0))
        X = X[:, cols]
        W0 = W0[:, cols]
    inputs, pre = [X], []
    a = X
    last = len(p.weights) - 1
    for k, (W, b) in enumerate(zip(p.weights, p.biases)):
        z = a @ (W0 if k == 0 else W).T + b
        pre.append(z)
        a = z if k == last else elu(z)
        if k != last:
            inputs.append(a)
    y = a[0] if squeeze else a
    return y, Tape(inputs, pre, cols, squeeze)


def backward(p, tape, grad_out, input_grad=True):
    """Gradients of ``sum(grad_out * y)`` w.r.t. every parameter and the input.

    ``input_grad`` may be ``False`` to skip the input gradient, or a slice of
    input columns to restrict it to.
    """
    g = np.asarray(grad_out, dtype=np.float64)
    if tape.squeeze:
        g = g[None, :]
    grads = [None] * len(p.weights)
    last = len(p.weights) - 1
    for k in range(last, -1, -1):
        dz = g if k == last else g * elu_grad(tape.pre[k])
        a_in = tape.inputs[k]
        dW = dz.T @ a_in
        db = dz.sum(axis=0)
        grads[k] = LayerGrad(dW, db, tape.cols if k == 0 else None)
        if k:
            g = dz @ p.weights[k]
    gx = None
    if input_grad is not False:
        W0 = p.weights[0] if input_grad is True else p.weights[0][:, input_grad]
        gx = dz @ W0
        if tape.squeeze:
            gx = gx[0]
    return grads, gx


def scale_grads(grads, c):
    return [LayerGrad(g.W * c, g.b * c, g.cols) for g in grads]


def dense_grads(p, grads):
    """Full-shape ``(dW, db)`` pairs, for checks and comparisons."""
    return [(g.dense_W(W.shape), g.b) for g, W in zip(grads, p.weights)]


@numba.njit(cache=True)
def _adam_col(w, m, v, g, lr, b1, b2, eps, c1, c2):
    for r in range(w.shape[0]):
        mi = b1 * m[r] + (1.0 - b1) * g[r]
        vi = b2 * v[r] + (1.0 - b2) * g[r] * g[r]
        m[r] = mi
        v[r] = vi
        w[r] -= lr * (mi / c1) / (np.sqrt(vi / c2) + eps)


@numba.njit(cache=True)
def _adam_cols(W, m, v, G, pos, live, lr, b1, b2, eps, c1, c2):
    # pos[c] = column of G holding the gradient of input column c, or -1
    zero = np.zeros(W.shape[0])
    for c in live:
        j = pos[c]
        g = G[:, j] if j >= 0 else zero
        _adam_col(W[:, c], m[:, c], v[:, c], g, lr, b1, b2, eps, c1, c2)


@numba.njit(cache=True)
def _adam_dense(P, m, v, G, lr, b1, b2, eps, c1, c2):
    for i in range(P.size):
        g = G[i]
        mi = b1 * m[i] + (1.0 - b1) * g
        vi = b2 * v[i] + (1.0 - b2) * g * g
        m[i] = mi
        v[i] = vi
        P[i] -= lr * (mi / c1) / (np.sqrt(vi / c2) + eps)


@dataclass
class AdamState:
    m: list
    v: list
    live: list  # per weight matrix: bool mask of input columns ever updated
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, p, **kw):
        return cls([np.zeros_like(a) for a in p.arrays()],
                   [np.zeros_like(a) for a in p.arrays()],
                   [np.zeros(W.shape[1], dtype=bool) for W in p.weights], **kw)


def adam_step(p, s, grads, lr):
    """Bias-corrected Adam update, applied in place; returns ``(p, s)``."""
    s.t += 1
    c1 = 1.0 - s.beta1 ** s.t
    c2 = 1.0 - s.beta2 ** s.t
    for k, (W, b, g) in enumerate(zip(p.weights, p.biases, grads)):
        mW, vW, mb, vb = s.m[2 * k], s.v[2 * k], s.m[2 * k + 1], s.v[2 * k + 1]
        live = s.live[k]
        if g.cols is None:
            G = np.asarray(g.W, order="F" if k == 0 else "C")
            pos = np.arange(W.shape[1])
            live[np.any(G != 0.0, axis=0)] = True
        else:
            G = np.asfortranarray(g.W)
            pos = np.full(W.shape[1], -1, dtype=np.int64)
            pos[g.cols] = np.arange(len(g.cols))
            live[g.cols[np.any(G != 0.0, axis=0)]] = True
        _adam_cols(W, mW, vW, G, pos, np.flatnonzero(live), lr, s.beta1, s.beta2, s.eps, c1, c2)
        _adam_dense(b, mb, vb, np.ascontiguousarray(g.b), lr, s.beta1, s.beta2, s.eps, c1, c2)
    return p, s


class CheckpointError(ValueError):
    pass


def save(p):
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", len(p.weights)))
    for W in p.weights:
        buf.write(struct.pack("<II", *W.shape))
    for W, b in zip(p.weights, p.biases):
        buf.write(W.astype("<f8").tobytes())
        buf.write(b.astype("<f8").tobytes())
    return buf.getvalue()


def load(data):
    mlp, used = _load_prefix(data)
    if used != len(data):
        raise CheckpointError(f"{len(data) - used} trailing bytes after network")
    return mlp


def _load_prefix(data, start=0):
    """Parse one network starting at ``start``; returns it with the end offset."""
    data = bytes(data)
    if data[start:start + 4] != MAGIC:
        raise CheckpointError("bad magic tag")
    pos = start + 4
    try:
        (n,) = struct.unpack_from("<I", data, pos)
        pos += 4
        if n == 0 or n > 1024:
            raise CheckpointError(f"implausible layer count {n}")
        shapes = []
        for _ in range(n):
            shapes.append(struct.unpack_from("<II", data, pos))
            pos += 8
    except struct.error as exc:
        raise CheckpointError("truncated header") from exc
    weights, biases = [], []
    for out_w, in_w in shapes:
        need = 8 * (out_w * in_w + out_w)
        if pos + need > len(data):
            raise CheckpointError("truncated parameter data")
        W = np.frombuffer(data, dtype="<f8", count=out_w * in_w, offset=pos).reshape(out_w, in_w)
        pos += 8 * out_w * in_w
        b = np.frombuffer(data, dtype="<f8", count=out_w, offset=pos)
        pos += 8 * out_w
        weights.append(W.astype(np.float64))
        biases.append(b.astype(np.float64))
    try:
        return MlpParams(weights, biases), pos
    except ValueError as exc:
        raise CheckpointError(str(exc)) from exc


def central_difference(f, arr, index, step=1e-5):
    old = arr[index]
    arr[index] = old + step
    hi = f()
    arr[index] = old - step
    lo = f()
    arr[index] = old
    return (hi - lo) / (2 * step)


def relative_error(analytic, numeric, floor=1e-8):
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)
