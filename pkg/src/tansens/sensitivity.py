"""Tangent sample sensitivity ``S(theta, x) = d grad_theta f / d x``.

Inside an activation region the backward vectors are constant in ``x`` and
``acts[k]`` moves with the region Jacobian, so the ``W_k`` block of ``S``
has entries ``S[(k, i, j), r] = deltas[k][i] * jacobians[k][j, r]`` and
bias rows vanish.  Consequently

    ||S||_F^2 = sum_k ||deltas[k]||^2 * ||jacobians[k]||_F^2

which is what the ``layerwise`` method evaluates without building ``S``.
"""

from dataclasses import dataclass

import numpy as np

from .grad_engine import backward_vectors, layer_decomposition, param_gradient, per_sample_gradients
from .network import forward_batch
from .tensor_core import DTYPE, make_rng

EXACT_ENTRY_LIMIT = 10_000_000
METHODS = ("exact", "layerwise", "probes", "auto")


@dataclass
class TangentSensitivity:
    kind: str
    norm: float
    out_idx: int
    matrix: np.ndarray = None
    x_ref: object = None
    stderr: float = 0.0


@dataclass
class PerturbationEstimate:
    sigma: float
    m: int
    mean_sq_gap: float
    bound_value: float
    stderr: float
    region_preserving_fraction: float


def _as_inputs(data):
    X = getattr(data, "inputs", data)
    X = np.asarray(X, dtype=DTYPE)
    if X.ndim == 1:
        X = X[None, :]
    return X


def sensitivity_from_decomposition(net, decomp):
    """Assemble the explicit ``P x n_in`` matrix from a LayerDecomposition."""
    blocks = []
    for k in range(net.n_layers):
        d, J = decomp.deltas[k], decomp.jacobians[k]
        blocks.append(np.einsum("i,jr->ijr", d, J).reshape(d.size * J.shape[0], net.n_in))
        if not net.biasless:
            blocks.append(np.zeros((d.size, net.n_in)))
    return np.concatenate(blocks, axis=0)


def tangent_sensitivity_exact(net, x, out_idx=0, x_ref=None):
    decomp = layer_decomposition(net, x, out_idx)
    S = sensitivity_from_decomposition(net, decomp)
    return TangentSensitivity("exact-matrix", float(np.linalg.norm(S)), out_idx, S, x_ref)


def layerwise_sq_norm(net, x, out_idx=0):
    decomp = layer_decomposition(net, x, out_idx)
    return float(sum((d @ d) * np.sum(J * J) for d, J in zip(decomp.deltas, decomp.jacobians)))


def _chunk_size(shape_elems, budget=4_000_000):
    return max(1, int(budget // max(1, shape_elems)))


def jacobian_sq_norms(net, X, preacts=None, route=None):
    """``||jacobians[k]||_F^2`` for every sample and layer, shape ``(n, L)``.

    ``route="jac"`` propagates the Jacobians themselves; ``route="gram"``
    propagates ``J J^T`` and is cheaper when ``n_in`` exceeds the hidden
    widths.  The default picks whichever is cheaper.
    """
    X = _as_inputs(X)
    if preacts is None:
        _, preacts, _ = forward_batch(net, X)
    n, L = X.shape[0], net.n_layers
    hidden = net.dims[1:-1]
    if route is None:
        route = "jac" if not hidden or net.n_in <= max(hidden) else "gram"
    out = np.empty((n, L), dtype=DTYPE)
    out[:, 0] = net.n_in
    if L == 1:
        return out
    masks = [z > 0 for z in preacts[:-1]]
    if route == "jac":
        step = _chunk_size(max(hidden) * net.n_in)
        for s in range(0, n, step):
            J = None
            for k in range(L - 1):
                m = masks[k][s:s + step, :, None]
                if J is None:
                    J = m * net.weights[0][None, :, :]
                else:
                    J = m * np.matmul(net.weights[k], J)
                out[s:s + step, k + 1] = np.sum(J * J, axis=(1, 2))
        return out
    if route != "gram":
        raise ValueError(f"unknown route {route!r}")
    w0 = net.weights[0]
    w0_rows = np.sum(w0 * w0, axis=1)
    out[:, 1] = masks[0] @ w0_rows
    if L == 2:
        return out
    gram0 = w0 @ w0.T
    step = _chunk_size(max(hidden) ** 2)
    for s in range(0, n, step):
        m0 = masks[0][s:s + step].astype(DTYPE)
        G = m0[:, :, None] * gram0[None, :, :] * m0[:, None, :]
        for k in range(1, L - 1):
            W = net.weights[k]
            M = np.matmul(W, G)
            diag = np.einsum("nij,ij->ni", M, W)
            mk = masks[k][s:s + step].astype(DTYPE)
            out[s:s + step, k + 1] = np.sum(diag * mk, axis=1)
            if k + 1 < L - 1:
                G = mk[:, :, None] * np.matmul(M, W.T) * mk[:, None, :]
    return out


def layerwise_sq_norms(net, X, outputs=(0,), route=None):
    """``||S(theta, x)||_F^2`` per sample and requested output, shape ``(n, len(outputs))``."""
    X = _as_inputs(X)
    _, preacts, _ = forward_batch(net, X)
    jn = jacobian_sq_norms(net, X, preacts, route)
    res = np.empty((X.shape[0], len(outputs)), dtype=DTYPE)
    for c, o in enumerate(outputs):
        deltas = backward_vectors(net, None, o, preacts)
        dn = np.stack([np.sum(d * d, axis=1) for d in deltas], axis=1)
        res[:, c] = np.sum(dn * jn, axis=1)
    return res


def probe_sq_norm(net, x, out_idx=0, m=64, seed=0):
    """Monte Carlo ``E_v ||S v||^2`` with ``v ~ N(0, I)``; returns ``(mean, stderr)``.

    ``S v`` is the directional derivative of ``grad_theta f`` along ``v``
    with the activation pattern of ``x`` held fixed.
    """
    if m < 1:
        raise ValueError("probe count m must be >= 1")
    x = np.asarray(x, dtype=DTYPE)
    rng = make_rng(seed)
    V = rng.standard_normal((int(m), net.n_in))
    _, preacts, _ = forward_batch(net, x[None, :])
    deltas = backward_vectors(net, None, out_idx, preacts)
    dn = [float(d[0] @ d[0]) for d in deltas]
    t = V
    vals = dn[0] * np.sum(t * t, axis=1)
    for k in range(net.n_layers - 1):
        t = (t @ net.weights[k].T) * (preacts[k][0] > 0)
        vals = vals + dn[k + 1] * np.sum(t * t, axis=1)
    se = float(np.std(vals, ddof=1) / np.sqrt(m)) if m > 1 else float("nan")
    return float(np.mean(vals)), se


def resolve_method(net, method):
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    if method == "auto":
        return "exact" if net.n_params * net.n_in <= EXACT_ENTRY_LIMIT else "layerwise"
    return method


def ts_frobenius_norm(net, x, out_idx=0, method="exact", m=64, seed=0):
    method = resolve_method(net, method)
    if method == "exact":
        return tangent_sensitivity_exact(net, x, out_idx).norm
    if method == "layerwise":
        return float(np.sqrt(layerwise_sq_norm(net, x, out_idx)))
    mean, _ = probe_sq_norm(net, x, out_idx, m, seed)
    return float(np.sqrt(mean))


def sample_norms(net, data, outputs=(0,), method="layerwise", m=64, seed=0):
    """Per-sample ``||S||_F`` for a dataset, shape ``(n, len(outputs))``."""
    X = _as_inputs(data)
    if X.shape[0] == 0:
        raise ValueError("empty dataset")
    method = resolve_method(net, method)
    if method == "layerwise":
        return np.sqrt(layerwise_sq_norms(net, X, outputs))
    res = np.empty((X.shape[0], len(outputs)))
    for j, x in enumerate(X):
        for c, o in enumerate(outputs):
            res[j, c] = ts_frobenius_norm(net, x, o, method, m, seed + j)
    return res


def avg_ts_norm(net, data, out_idx=0, method="layerwise", m=64, seed=0):
    """Mean over samples of ``||S(theta, x)||_F``."""
    return float(np.mean(sample_norms(net, data, (out_idx,), method, m, seed)[:, 0]))


def norm_of_mean(matrices):
    matrices = list(matrices)
    if not matrices:
        raise ValueError("empty dataset")
    acc = np.zeros_like(matrices[0])
    for S in matrices:
        acc += S
    return float(np.linalg.norm(acc / len(matrices)))


def mean_sensitivity_norm(net, data, out_idx=0):
    """``|| mean_x S(theta, x) ||_F`` (norm of the mean matrix)."""
    X = _as_inputs(data)
    if X.shape[0] == 0:
        raise ValueError("empty dataset")
    return norm_of_mean(tangent_sensitivity_exact(net, x, out_idx).matrix for x in X)


def gradient_perturbation_gap(net, x, out_idx=0, sigma=None, m=500, seed=0):
    """Empirical ``E ||grad f(x) - grad f(x + d)||^2`` for ``d ~ N(0, sigma I)``.

    ``sigma`` is the noise variance; it defaults to ``1e-6 * ||x||^2``.
    """
    x = np.asarray(x, dtype=DTYPE)
    if sigma is None:
        sigma = 1e-6 * float(x @ x)
    if sigma <= 0 or m < 1:
        raise ValueError("need sigma > 0 and m >= 1")
    rng = make_rng(seed)
    D = rng.standard_normal((int(m), net.n_in)) * np.sqrt(sigma)
    g0 = param_gradient(net, x, out_idx)
    _, pre0, _ = forward_batch(net, x[None, :])
    pat0 = [z[0] > 0 for z in pre0[:-1]]
    gaps = np.empty(int(m))
    same = np.empty(int(m), dtype=bool)
    step = _chunk_size(net.n_params)
    for s in range(0, int(m), step):
        Xp = x[None, :] + D[s:s + step]
        diff = per_sample_gradients(net, Xp, out_idx) - g0[None, :]
        gaps[s:s + step] = np.sum(diff * diff, axis=1)
        _, pre, _ = forward_batch(net, Xp)
        ok = np.ones(Xp.shape[0], dtype=bool)
        for z, p in zip(pre[:-1], pat0):
            ok &= np.all((z > 0) == p, axis=1)
        same[s:s + step] = ok
    s_sq = layerwise_sq_norm(net, x, out_idx)
    se = float(np.std(gaps, ddof=1) / np.sqrt(m)) if m > 1 else float("nan")
    return PerturbationEstimate(float(sigma), int(m), float(np.mean(gaps)), float(sigma * s_sq), se, float(np.mean(same)))


class LemmaNotApplicable(ValueError):
    """Raised when the gradient identity is requested for a net with biases."""


def lemma_residual(net, x, out_idx=0):
    """``||grad f - S x|| / max(1, ||grad f||)`` regardless of biases."""
    g = param_gradient(net, x, out_idx)
    S = tangent_sensitivity_exact(net, x, out_idx).matrix
    r = g - S @ np.asarray(x, dtype=DTYPE)
    return float(np.linalg.norm(r) / max(1.0, np.linalg.norm(g)))


def verify_lemma_relu(net, x, out_idx=0):
    if not net.biasless:
        raise LemmaNotApplicable("gradient identity grad f = S x only holds for biasless networks")
    return lemma_residual(net, x, out_idx)
