"""Hand-written reverse-mode derivatives for ReLU MLPs.

Layers are indexed from 0 in code.  For layer ``k`` (weight ``W_k``):

* ``acts[k]`` is its input (``acts[0] = x``),
* ``deltas[k] = d f_i / d z_k`` is the backward vector of the chosen output,
* ``jacobians[k] = d acts[k] / d x`` is the region Jacobian
  ``D_{k-1} W_{k-1} ... D_0 W_0`` (identity for ``k = 0``).

Within a fixed activation region ``grad_{W_k} f = outer(deltas[k], acts[k])``
and, for biasless nets, ``acts[k] = jacobians[k] @ x``.
"""

from dataclasses import dataclass

import numpy as np

from .network import forward_batch
from .tensor_core import DTYPE


@dataclass
class LayerDecomposition:
    acts: list
    deltas: list
    jacobians: list
    output: float


def _check_out_idx(net, out_idx):
    if not 0 <= out_idx < net.n_out:
        raise ValueError(f"out_idx {out_idx} out of range for n_out={net.n_out}")


def backward_vectors(net, X, out_idx, preacts=None):
    """Backward vectors ``deltas[k]`` of shape ``(n, dims[k+1])`` for a batch."""
    _check_out_idx(net, out_idx)
    if preacts is None:
        _, preacts, _ = forward_batch(net, X)
    n = preacts[0].shape[0]
    L = net.n_layers
    deltas = [None] * L
    d = np.zeros((n, net.n_out), dtype=DTYPE)
    d[:, out_idx] = 1.0
    deltas[L - 1] = d
    for k in range(L - 2, -1, -1):
        d = (d @ net.weights[k + 1]) * (preacts[k] > 0)
        deltas[k] = d
    return deltas


def per_sample_gradients(net, X, out_idx):
    """Rows are ``grad_theta f_{out_idx}(theta, x_j)`` in the flat layout."""
    _, preacts, acts = forward_batch(net, X)
    deltas = backward_vectors(net, X, out_idx, preacts)
    n = acts[0].shape[0]
    parts = []
    for k in range(net.n_layers):
        parts.append(np.einsum("ni,nj->nij", deltas[k], acts[k]).reshape(n, -1))
        if net.biases is not None:
            parts.append(deltas[k])
    return np.concatenate(parts, axis=1)


def param_gradient(net, x, out_idx=0):
    x = np.asarray(x, dtype=DTYPE)
    if x.ndim != 1 or x.shape[0] != net.n_in:
        raise ValueError(f"expected an input vector of length {net.n_in}")
    return per_sample_gradients(net, x[None, :], out_idx)[0]


def layer_decomposition(net, x, out_idx=0):
    x = np.asarray(x, dtype=DTYPE)
    if x.ndim != 1 or x.shape[0] != net.n_in:
        raise ValueError(f"expected an input vector of length {net.n_in}")
    out, preacts, acts = forward_batch(net, x[None, :])
    deltas = backward_vectors(net, None, out_idx, preacts)
    jac = np.eye(net.n_in)
    jacobians = [jac]
    for k in range(net.n_layers - 1):
        jac = (preacts[k][0] > 0)[:, None] * (net.weights[k] @ jac)
        jacobians.append(jac)
    return LayerDecomposition(
        acts=[a[0] for a in acts],
        deltas=[d[0] for d in deltas],
        jacobians=jacobians,
        output=float(out[0, out_idx]),
    )


class SquaredLoss:
    """``l(f, y) = (f - y)^2``."""

    name = "squared"

    def value(self, f, y):
        u = np.asarray(f) - np.asarray(y)
        return u * u

    def derivative(self, f, y):
        return 2.0 * (np.asarray(f) - np.asarray(y))

    def lipschitz(self, residual_bound):
        """Lipschitz constant of ``u -> u^2`` on ``|u| <= residual_bound``."""
        return 2.0 * residual_bound

    def upper_bound(self, residual_bound):
        return residual_bound ** 2


class AbsoluteLoss:
    """``l(f, y) = |f - y|``; derivative 0 at the kink."""

    name = "absolute"

    def value(self, f, y):
        return np.abs(np.asarray(f) - np.asarray(y))

    def derivative(self, f, y):
        return np.sign(np.asarray(f) - np.asarray(y)).astype(DTYPE)

    def lipschitz(self, residual_bound):
        return 1.0

    def upper_bound(self, residual_bound):
        return float(residual_bound)


LOSSES = {"squared": SquaredLoss, "absolute": AbsoluteLoss}


def get_loss(spec):
    if isinstance(spec, str):
        try:
            return LOSSES[spec]()
        except KeyError:
            raise ValueError(f"unknown loss {spec!r}") from None
    return spec


def loss_value_and_derivative(f_val, y, loss=None):
    """Return ``(l, dl/df)`` for one prediction; ``y`` must be +1 or -1."""
    if y not in (-1, 1):
        raise ValueError(f"label must be +1 or -1, got {y!r}")
    loss = SquaredLoss() if loss is None else get_loss(loss)
    return float(loss.value(f_val, y)), float(loss.derivative(f_val, y))


def empirical_loss_gradient(net, X, Y, loss):
    """Full-batch empirical loss, its flat gradient and ``dl/df``.

    ``Y`` has shape ``(n, n_out)``.  The empirical loss is the uniform
    average over samples of the per-output losses summed over outputs.
    Returns ``(loss_value, grad, dl_df)`` with ``dl_df`` of shape
    ``(n, n_out)`` (not divided by ``n``).
    """
    out, preacts, acts = forward_batch(net, X)
    n = out.shape[0]
    dl_df = loss.derivative(out, Y)
    value = float(np.sum(loss.value(out, Y)) / n)
    g = dl_df / n
    grads_w = [None] * net.n_layers
    grads_b = [None] * net.n_layers
    for k in range(net.n_layers - 1, -1, -1):
        grads_w[k] = g.T @ acts[k]
        grads_b[k] = g.sum(axis=0)
        if k > 0:
            g = (g @ net.weights[k]) * (preacts[k - 1] > 0)
    parts = []
    for k in range(net.n_layers):
        parts.append(grads_w[k].ravel())
        if net.biases is not None:
            parts.append(grads_b[k])
    return value, np.concatenate(parts), dl_df
