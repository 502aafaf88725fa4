"""Training loops that record the gradient-descent trajectory.

Full-batch gradient descent is the setting the generalization bound talks
about; SGD and Adam exist for experiment parity and every record they
produce carries ``in_theory = False``.

Step ``t`` (``1 <= t <= T``) uses learning rate ``rates[t - 1]`` and the
gradient at ``theta_{t-1}``.  Alongside the parameters the loop keeps

* ``w_accum = sum_t eta(t) grad L(theta_{t-1})`` (equal to ``theta_0 - theta_T``
  for full-batch GD),
* per-step mean loss derivatives ``mean_dldf[t-1, c] = (1/n) sum_i dl/df_c``,
  from which the signed and absolute C_GD accumulators follow.
"""

import csv
import io
import os
from dataclasses import dataclass, field

import numpy as np

from .grad_engine import backward_vectors, empirical_loss_gradient, get_loss
from .network import ParamLayout, flatten, forward_batch, unflatten
from .sensitivity import layerwise_sq_norms, tangent_sensitivity_exact
from .tensor_core import DTYPE, make_rng


class StepSizeError(RuntimeError):
    """Full-batch GD increased the training loss; the step size is too large."""


@dataclass
class Schedule:
    rates: np.ndarray

    def __post_init__(self):
        self.rates = np.asarray(self.rates, dtype=DTYPE).ravel()
        if np.any(self.rates <= 0):
            raise ValueError("learning rates must be positive")

    @property
    def T(self):
        return self.rates.size

    def __call__(self, t):
        if not 1 <= t <= self.T:
            raise IndexError(f"step {t} outside 1..{self.T}")
        return float(self.rates[t - 1])

    @classmethod
    def constant(cls, eta, T):
        return cls(np.full(int(T), float(eta)))

    @classmethod
    def inverse_time(cls, eta, decay, T):
        t = np.arange(1, int(T) + 1)
        return cls(float(eta) / (1.0 + float(decay) * (t - 1)))

    def scaled(self, c):
        return Schedule(self.rates * c)


@dataclass
class GD:
    name = "gd"


@dataclass
class SGD:
    batch_size: int = 32
    seed: int = 0
    name = "sgd"


@dataclass
class Adam:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = None
    seed: int = 0
    name = "adam"


def make_optimizer(name, **kw):
    name = name.lower()
    if name == "gd":
        return GD()
    if name == "sgd":
        return SGD(**{k: v for k, v in kw.items() if k in ("batch_size", "seed")})
    if name == "adam":
        return Adam(**{k: v for k, v in kw.items() if k in ("beta1", "beta2", "eps", "batch_size", "seed")})
    raise ValueError(f"unknown optimizer {name!r}")


@dataclass
class TrajectoryRecord:
    layout: ParamLayout
    theta0: np.ndarray
    rates: np.ndarray
    optimizer: str
    steps: list = field(default_factory=list)
    displacements: list = field(default_factory=list)
    epsilon_distance: list = field(default_factory=list)
    path_length: list = field(default_factory=list)
    train_loss: list = field(default_factory=list)
    test_loss: list = field(default_factory=list)
    running_cts: list = field(default_factory=list)
    cts_outputs: tuple = ()
    mean_dldf: np.ndarray = None
    w_accum: np.ndarray = None
    flags: list = field(default_factory=list)

    @property
    def in_theory(self):
        return self.optimizer == "gd"

    @property
    def T(self):
        return int(len(self.rates))

    @property
    def eta_used(self):
        return Schedule(self.rates) if self.T else None

    def cgd_series(self, absolute=False):
        """Per-step prefix sums of ``eta(t) * mean dl/df``, shape ``(T + 1, n_out)``."""
        inc = self.rates[:, None] * self.mean_dldf
        if absolute:
            inc = np.abs(inc)
        return np.vstack([np.zeros((1, inc.shape[1])), np.cumsum(inc, axis=0)])

    @property
    def cgd_signed(self):
        return self.cgd_series()[-1]

    @property
    def cgd_abs(self):
        return self.cgd_series(absolute=True)[-1]

    def params_at(self, i):
        return self.theta0 + self.displacements[i]

    def net_at(self, i):
        return unflatten(self.layout, self.params_at(i))

    @property
    def final_params(self):
        return self.params_at(len(self.steps) - 1)

    def export_csv(self, path=None, classes=None):
        return export_trajectory_csv(self, path, classes)


def _batches(n, batch_size, rng):
    order = rng.permutation(n)
    return [order[s:s + batch_size] for s in range(0, n, batch_size)]


def _per_output_loss(net, X, Y, loss):
    if X is None or X.shape[0] == 0:
        return None
    out = forward_batch(net, X)[0]
    return np.mean(loss.value(out, Y), axis=0)


def train(net0, data, schedule, optimizer=None, record_every=1, test=None, loss="squared",
          track_cts=True, cts_outputs=None, check_descent=True, descent_rtol=1e-9,
          on_checkpoint=None):
    """Run ``schedule.T`` optimizer steps from ``net0`` on ``data``.

    Checkpoints are taken at ``t = 0``, every ``record_every`` steps and at
    ``t = T``.  ``track_cts`` evaluates the largest training-set sensitivity
    norm per output at each checkpoint (layerwise method).  ``on_checkpoint``
    is called as ``on_checkpoint(t, net)`` once each checkpoint is stored.
    """
    optimizer = optimizer or GD()
    if isinstance(optimizer, str):
        optimizer = make_optimizer(optimizer)
    loss = get_loss(loss)
    X = data.inputs
    Y = data.targets(net0.n_out)
    Xt = test.inputs if test is not None else None
    Yt = test.targets(net0.n_out) if test is not None else None
    if X.shape[0] == 0:
        raise ValueError("empty training set")
    T = schedule.T if schedule is not None else 0
    rates = schedule.rates if schedule is not None else np.zeros(0)
    cts_outputs = tuple(range(net0.n_out)) if cts_outputs is None else tuple(cts_outputs)

    layout = net0.layout
    theta0 = flatten(net0)
    theta = theta0.copy()
    rec = TrajectoryRecord(layout, theta0, rates.copy(), optimizer.name, cts_outputs=cts_outputs if track_cts else ())
    if not rec.in_theory:
        rec.flags.append("out-of-theory-assumptions")
    rec.mean_dldf = np.zeros((T, net0.n_out))
    w_accum = np.zeros_like(theta0)
    path_len = 0.0

    def checkpoint(t, net):
        rec.steps.append(t)
        disp = theta - theta0
        rec.displacements.append(disp)
        rec.epsilon_distance.append(float(np.linalg.norm(disp)))
        rec.path_length.append(path_len)
        rec.train_loss.append(_per_output_loss(net, X, Y, loss))
        rec.test_loss.append(_per_output_loss(net, Xt, Yt, loss))
        if track_cts:
            rec.running_cts.append(np.sqrt(np.max(layerwise_sq_norms(net, X, cts_outputs), axis=0)))
        if on_checkpoint is not None:
            on_checkpoint(t, net)

    net = unflatten(layout, theta)
    checkpoint(0, net)
    rng = make_rng(getattr(optimizer, "seed", 0))
    batch_size = getattr(optimizer, "batch_size", None) or X.shape[0]
    queue = []
    m_state = np.zeros_like(theta)
    v_state = np.zeros_like(theta)
    prev_value = None
    for t in range(1, T + 1):
        if optimizer.name == "gd":
            idx = None
        else:
            if not queue:
                queue = _batches(X.shape[0], batch_size, rng)
            idx = queue.pop(0)
        Xb = X if idx is None else X[idx]
        Yb = Y if idx is None else Y[idx]
        value, grad, dl_df = empirical_loss_gradient(net, Xb, Yb, loss)
        if optimizer.name == "gd" and check_descent and prev_value is not None:
            if value > prev_value * (1.0 + descent_rtol) + 1e-300:
                raise StepSizeError(
                    f"training loss rose from {prev_value:.6g} to {value:.6g} at step {t - 1} "
                    f"with eta={rates[t - 2]:.3g}; reduce the learning rate"
                )
        prev_value = value
        eta = rates[t - 1]
        rec.mean_dldf[t - 1] = np.mean(dl_df, axis=0)
        path_len += eta * float(np.linalg.norm(grad))
        if optimizer.name == "adam":
            b1, b2 = optimizer.beta1, optimizer.beta2
            m_state = b1 * m_state + (1 - b1) * grad
            v_state = b2 * v_state + (1 - b2) * grad * grad
            mhat = m_state / (1 - b1 ** t)
            vhat = v_state / (1 - b2 ** t)
            theta = theta - eta * mhat / (np.sqrt(vhat) + optimizer.eps)
        else:
            theta = theta - eta * grad
            w_accum = w_accum + eta * grad
        net = unflatten(layout, theta)
        if t % record_every == 0 or t == T:
            checkpoint(t, net)
    rec.w_accum = w_accum if optimizer.name != "adam" else None
    return rec


def gd_step(net, batch, eta_t, loss="squared"):
    """One full-batch gradient step on the empirical loss of ``batch``."""
    if eta_t <= 0:
        raise ValueError("eta must be positive")
    if len(batch) == 0:
        raise ValueError("empty batch")
    _, grad, _ = empirical_loss_gradient(net, batch.inputs, batch.targets(net.n_out), get_loss(loss))
    return unflatten(net.layout, flatten(net) - eta_t * grad)


def w_theta(record):
    """``sum_{t=1}^{T} eta(t) grad L(theta_{t-1})`` accumulated during training."""
    if not record.in_theory:
        raise ValueError("w_theta is only defined for full-batch gradient descent records")
    return record.w_accum.copy()


def w_theta_lemma_form(record, data, loss="squared"):
    """Recompute ``w_theta`` as ``sum_t eta(t) (1/n) sum_i dl/df S(theta_{t-1}, x_i) x_i``.

    Uses the explicit sensitivity matrices, so it needs a biasless network
    and a record with a checkpoint at every step.
    """
    if not record.in_theory:
        raise ValueError("w_theta is only defined for full-batch gradient descent records")
    if not record.layout.biasless:
        raise ValueError("the S x form of w_theta requires a biasless network")
    if record.steps != list(range(record.T + 1)):
        raise ValueError("record must checkpoint every step (record_every=1)")
    loss = get_loss(loss)
    X = data.inputs
    n_out = record.layout.dims[-1]
    Y = data.targets(n_out)
    w = np.zeros_like(record.theta0)
    for t in range(1, record.T + 1):
        net = record.net_at(t - 1)
        dl_df = loss.derivative(forward_batch(net, X)[0], Y)
        acc = np.zeros_like(w)
        for i, x in enumerate(X):
            for c in range(n_out):
                S = tangent_sensitivity_exact(net, x, c).matrix
                acc += dl_df[i, c] * (S @ x)
        w += record.rates[t - 1] * acc / X.shape[0]
    return w


@dataclass
class TaylorResidual:
    x_ref: object
    h_value: float
    f0: float
    fT: float
    linear_term: float

    @property
    def abs_h(self):
        return abs(self.h_value)


def taylor_residuals(net0, netT, X, out_idx=0):
    """Vectorised ``h(theta_T, x) = f_T - f_0 - <grad f_0, theta_T - theta_0>``.

    Returns ``(h, f0, fT, linear)`` arrays over the rows of ``X``.
    """
    if net0.layout != netT.layout:
        raise ValueError("architecture mismatch between the two networks")
    X = np.atleast_2d(np.asarray(X, dtype=DTYPE))
    out0, pre0, acts0 = forward_batch(net0, X)
    outT = forward_batch(netT, X)[0]
    deltas = backward_vectors(net0, None, out_idx, pre0)
    linear = np.zeros(X.shape[0])
    for k in range(net0.n_layers):
        dW = netT.weights[k] - net0.weights[k]
        linear += np.einsum("ni,ij,nj->n", deltas[k], dW, acts0[k])
        if not net0.biasless:
            linear += deltas[k] @ (netT.biases[k] - net0.biases[k])
    f0 = out0[:, out_idx]
    fT = outT[:, out_idx]
    return fT - f0 - linear, f0, fT, linear


def taylor_residual(net0, netT, x, out_idx=0, x_ref=None):
    h, f0, fT, lin = taylor_residuals(net0, netT, np.asarray(x)[None, :], out_idx)
    return TaylorResidual(x_ref, float(h[0]), float(f0[0]), float(fT[0]), float(lin[0]))


@dataclass
class CgdCheck:
    C: float
    passed_abs: bool
    passed_signed: bool
    first_violation_abs: int = None
    first_violation_signed: int = None

    @property
    def passed(self):
        return self.passed_abs and self.passed_signed


def assert_cgd_bound(record, C, out_idx=0):
    """Check every prefix of the C_GD accumulators against ``C``.

    Witness steps are the first ``t`` whose prefix sum exceeds ``C``.
    """
    if C <= 0:
        raise ValueError("C must be positive")
    signed = record.cgd_series()[:, out_idx]
    absolute = record.cgd_series(absolute=True)[:, out_idx]

    def first(series):
        bad = np.flatnonzero(series > C)
        return int(bad[0]) if bad.size else None

    fa, fs = first(absolute), first(signed)
    return CgdCheck(float(C), fa is None, fs is None, fa, fs)


def _fmt(v):
    return repr(float(v))


def export_trajectory_csv(record, path=None, classes=None):
    """One row per checkpoint; returns the CSV text and writes it if ``path``."""
    n_out = record.layout.dims[-1]
    classes = list(range(n_out)) if classes is None else list(classes)
    signed = record.cgd_series()
    absolute = record.cgd_series(absolute=True)
    has_test = record.test_loss and record.test_loss[0] is not None
    header = ["t"]
    header += [f"train_loss_{c}" for c in classes]
    if has_test:
        header += [f"test_loss_{c}" for c in classes]
    header += [f"cgd_signed_{c}" for c in classes] + [f"cgd_abs_{c}" for c in classes]
    header += ["epsilon_distance"]
    cts_cols = [c for c in classes if c in record.cts_outputs]
    header += [f"running_cts_{c}" for c in cts_cols]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for i, t in enumerate(record.steps):
        row = [t]
        row += [_fmt(record.train_loss[i][c]) for c in classes]
        if has_test:
            row += [_fmt(record.test_loss[i][c]) for c in classes]
        row += [_fmt(signed[t, c]) for c in classes] + [_fmt(absolute[t, c]) for c in classes]
        row.append(_fmt(record.epsilon_distance[i]))
        if cts_cols:
            row += [_fmt(record.running_cts[i][record.cts_outputs.index(c)]) for c in cts_cols]
        w.writerow(row)
    text = buf.getvalue()
    if path is not None:
        atomic_write_text(path, text)
    return text


def atomic_write_text(path, text):
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def save_record(path, record):
    """Store a record as ``.npz`` (displacements stacked)."""
    arrays = {
        "dims": np.asarray(record.layout.dims),
        "biasless": np.asarray(record.layout.biasless),
        "theta0": record.theta0,
        "rates": record.rates,
        "optimizer": np.asarray(record.optimizer),
        "steps": np.asarray(record.steps),
        "displacements": np.stack(record.displacements),
        "epsilon_distance": np.asarray(record.epsilon_distance),
        "path_length": np.asarray(record.path_length),
        "train_loss": np.stack(record.train_loss),
        "mean_dldf": record.mean_dldf,
        "cts_outputs": np.asarray(record.cts_outputs, dtype=np.int64),
        "flags": np.asarray(record.flags, dtype=str),
    }
    if record.test_loss and record.test_loss[0] is not None:
        arrays["test_loss"] = np.stack(record.test_loss)
    if record.running_cts:
        arrays["running_cts"] = np.stack(record.running_cts)
    if record.w_accum is not None:
        arrays["w_accum"] = record.w_accum
    tmp = f"{path}.tmp.npz"
    np.savez(tmp, **arrays)
    os.replace(tmp, path)


def load_record(path):
    z = np.load(path, allow_pickle=False)
    layout = ParamLayout(tuple(int(d) for d in z["dims"]), bool(z["biasless"]))
    rec = TrajectoryRecord(
        layout=layout,
        theta0=z["theta0"],
        rates=z["rates"],
        optimizer=str(z["optimizer"]),
        steps=[int(s) for s in z["steps"]],
        displacements=list(z["displacements"]),
        epsilon_distance=[float(v) for v in z["epsilon_distance"]],
        path_length=[float(v) for v in z["path_length"]],
        train_loss=list(z["train_loss"]),
        test_loss=list(z["test_loss"]) if "test_loss" in z else [None] * len(z["steps"]),
        running_cts=list(z["running_cts"]) if "running_cts" in z else [],
        cts_outputs=tuple(int(c) for c in z["cts_outputs"]),
        mean_dldf=z["mean_dldf"],
        w_accum=z["w_accum"] if "w_accum" in z else None,
        flags=[str(f) for f in z["flags"]],
    )
    return rec
