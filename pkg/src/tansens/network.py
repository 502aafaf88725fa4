"""Feedforward ReLU networks with an explicit flat parameter layout.

A network with widths ``(n_in, h_1, ..., h_{L-1}, n_out)`` has ``L`` affine
layers.  Hidden layers apply ReLU with the convention ReLU'(0) = 0, so a
unit counts as active only when its preactivation is strictly positive.
The output layer is linear.

Flat parameter layout (layer-major, weights before biases)::

    [W_1 (row-major, h_1 x n_in), b_1, W_2, b_2, ..., W_L, b_L]

Biasless networks simply omit every ``b_k`` block.

Checkpoint file format (little-endian, version 1)::

    line 1: b"TANSENS-CKPT 1\\n"
    line 2: UTF-8 JSON header {"dims": [...], "biasless": bool, "n_params": P}
            terminated by b"\\n"
    rest:   P float64 values in the flat layout above, '<f8'
"""

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .tensor_core import DTYPE, make_rng

CKPT_MAGIC = b"TANSENS-CKPT 1\n"


@dataclass(frozen=True)
class ParamLayout:
    dims: tuple
    biasless: bool = True

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if len(dims) < 2 or min(dims) < 1:
            raise ValueError(f"invalid dims {self.dims!r}: need >= 2 widths, all >= 1")
        object.__setattr__(self, "dims", dims)

    @property
    def n_layers(self):
        return len(self.dims) - 1

    @property
    def n_params(self):
        p = sum(self.dims[k + 1] * self.dims[k] for k in range(self.n_layers))
        if not self.biasless:
            p += sum(self.dims[1:])
        return p

    def blocks(self):
        """Yield ``(kind, layer, slice, shape)`` in flat order."""
        off = 0
        for k in range(self.n_layers):
            shape = (self.dims[k + 1], self.dims[k])
            size = shape[0] * shape[1]
            yield "W", k, slice(off, off + size), shape
            off += size
            if not self.biasless:
                n = self.dims[k + 1]
                yield "b", k, slice(off, off + n), (n,)
                off += n

    def weight_slice(self, k):
        for kind, layer, sl, _ in self.blocks():
            if kind == "W" and layer == k:
                return sl
        raise IndexError(k)

    def bias_slice(self, k):
        for kind, layer, sl, _ in self.blocks():
            if kind == "b" and layer == k:
                return sl
        raise IndexError(f"no bias block for layer {k}")

    def bias_mask(self):
        """Boolean mask over the flat vector, True on bias entries."""
        mask = np.zeros(self.n_params, dtype=bool)
        for kind, _, sl, _ in self.blocks():
            if kind == "b":
                mask[sl] = True
        return mask


@dataclass
class Network:
    """A ReLU MLP.  ``weights[k]`` has shape ``(dims[k+1], dims[k])``."""

    dims: tuple
    weights: list
    biases: list = field(default=None)

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        if len(self.weights) != len(self.dims) - 1:
            raise ValueError("number of weight matrices does not match dims")
        self.weights = [np.asarray(w, dtype=DTYPE) for w in self.weights]
        for k, w in enumerate(self.weights):
            if w.shape != (self.dims[k + 1], self.dims[k]):
                raise ValueError(f"layer {k} weight shape {w.shape} != {(self.dims[k + 1], self.dims[k])}")
        if self.biases is not None:
            self.biases = [np.asarray(b, dtype=DTYPE) for b in self.biases]
            if len(self.biases) != len(self.weights):
                raise ValueError("number of bias vectors does not match dims")
            for k, b in enumerate(self.biases):
                if b.shape != (self.dims[k + 1],):
                    raise ValueError(f"layer {k} bias shape {b.shape} != {(self.dims[k + 1],)}")

    @property
    def biasless(self):
        return self.biases is None

    @property
    def layout(self):
        return ParamLayout(self.dims, self.biasless)

    @property
    def n_params(self):
        return self.layout.n_params

    @property
    def n_in(self):
        return self.dims[0]

    @property
    def n_out(self):
        return self.dims[-1]

    @property
    def n_layers(self):
        return len(self.weights)

    def copy(self):
        return unflatten(self.layout, flatten(self))


def init_network(dims, biasless=True, seed=0, scale=np.sqrt(2.0)):
    """Gaussian init with std ``scale / sqrt(fan_in)``; biases start at zero."""
    layout = ParamLayout(dims, biasless)
    rng = make_rng(seed)
    weights = []
    for k in range(layout.n_layers):
        fan_in = layout.dims[k]
        w = rng.standard_normal((layout.dims[k + 1], fan_in)) * (scale / np.sqrt(fan_in))
        weights.append(w)
    biases = None if biasless else [np.zeros(h) for h in layout.dims[1:]]
    return Network(layout.dims, weights, biases)


def _check_input(net, x):
    x = np.asarray(x, dtype=DTYPE)
    if x.shape[-1] != net.n_in:
        raise ValueError(f"input has length {x.shape[-1]}, network expects {net.n_in}")
    return x


def forward_batch(net, X):
    """Forward a batch ``X`` of shape ``(n, n_in)``.

    Returns ``(outputs, preacts, acts)`` where ``acts[k]`` is the input to
    layer ``k`` (so ``acts[0] is X``) and ``preacts[k]`` its preactivation.
    """
    X = _check_input(net, X)
    if X.ndim == 1:
        X = X[None, :]
    acts = [X]
    preacts = []
    a = X
    for k, w in enumerate(net.weights):
        z = a @ w.T
        if net.biases is not None:
            z = z + net.biases[k]
        preacts.append(z)
        if k < net.n_layers - 1:
            a = np.maximum(z, 0.0)
            acts.append(a)
    return preacts[-1], preacts, acts


def predict(net, X):
    return forward_batch(net, X)[0]


def forward(net, x):
    """Evaluate one input; returns ``(outputs, pattern)``.

    ``pattern`` is a tuple with one int8 0/1 vector per hidden layer marking
    strictly positive preactivations.
    """
    x = _check_input(net, x)
    if x.ndim != 1:
        raise ValueError("forward expects a single input vector")
    out, preacts, _ = forward_batch(net, x[None, :])
    pattern = tuple((z[0] > 0).astype(np.int8) for z in preacts[:-1])
    return out[0], pattern


def activation_patterns(net, X):
    """Boolean masks ``(n, h_k)`` for each hidden layer."""
    _, preacts, _ = forward_batch(net, X)
    return [z > 0 for z in preacts[:-1]]


def min_abs_preactivation(net, X):
    """Per-sample smallest ``|z|`` over all hidden units (distance to a kink)."""
    _, preacts, _ = forward_batch(net, X)
    if len(preacts) == 1:
        return np.full(np.atleast_2d(X).shape[0], np.inf)
    return np.min(np.concatenate([np.abs(z) for z in preacts[:-1]], axis=1), axis=1)


def flatten(net):
    parts = []
    for k, w in enumerate(net.weights):
        parts.append(w.ravel())
        if net.biases is not None:
            parts.append(net.biases[k])
    return np.concatenate(parts).astype(DTYPE, copy=True)


def unflatten(layout, v):
    v = np.asarray(v, dtype=DTYPE)
    if v.ndim != 1 or v.shape[0] != layout.n_params:
        raise ValueError(f"parameter vector has length {v.size}, layout needs {layout.n_params}")
    weights = [None] * layout.n_layers
    biases = None if layout.biasless else [None] * layout.n_layers
    for kind, k, sl, shape in layout.blocks():
        block = v[sl].reshape(shape).copy()
        if kind == "W":
            weights[k] = block
        else:
            biases[k] = block
    return Network(layout.dims, weights, biases)


def save_checkpoint(path, net):
    header = json.dumps({"dims": list(net.dims), "biasless": net.biasless, "n_params": net.n_params})
    payload = flatten(net).astype("<f8").tobytes()
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(header.encode("utf-8") + b"\n")
        fh.write(payload)
    os.replace(tmp, path)


def load_checkpoint(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if not raw.startswith(CKPT_MAGIC):
        raise ValueError(f"{path}: not a checkpoint file (bad magic)")
    rest = raw[len(CKPT_MAGIC):]
    nl = rest.find(b"\n")
    if nl < 0:
        raise ValueError(f"{path}: truncated header")
    header = json.loads(rest[:nl].decode("utf-8"))
    payload = rest[nl + 1:]
    layout = ParamLayout(tuple(header["dims"]), bool(header["biasless"]))
    if layout.n_params != header["n_params"] or len(payload) != 8 * layout.n_params:
        raise ValueError(f"{path}: payload length does not match header")
    return unflatten(layout, np.frombuffer(payload, dtype="<f8").astype(DTYPE))
