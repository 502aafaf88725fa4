"""Constants, Rademacher estimates and assembly of the generalization bound.

The assembled right-hand side is::

    rhs = K_L * K_theta0 + C1 / sqrt(N) + K_L * H + B * sqrt(2 * log(4 / delta) / N)
    C1  = 2 * K_L * K_x * K_grad0 * C_TS * C_GD

All "measured" constants are suprema over the finite sample they were
computed on, never claims about the data distribution.
"""

import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .grad_engine import get_loss, per_sample_gradients
from .network import flatten, forward_batch
from .sensitivity import sample_norms
from .tensor_core import DTYPE, make_rng
from .training import taylor_residuals

RESIDUAL_SAFETY = 1.5
CONSTANT_NAMES = ("K_L", "B", "K_theta0", "K_grad0", "K_x", "C_TS", "C_GD")


@dataclass
class ConstantSet:
    K_L: float
    B: float
    K_theta0: float
    K_grad0: float
    K_x: float
    C_TS: float
    C_GD: float
    C_GD_signed: float = float("nan")
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in CONSTANT_NAMES:
            if getattr(self, name) < 0:
                raise ValueError(f"constant {name} must be nonnegative")


@dataclass
class RademacherEstimate:
    value: float
    stderr: float
    K: int
    family_size: int
    m: int
    sup_abs: float = float("nan")


def rademacher_mc(values, K=1000, seed=0, chunk=4096):
    """Monte Carlo ``E_sigma[max_rows (1/m) sum_i sigma_i a_i]``.

    ``values`` is a ``family_size x m`` matrix; each row is one member of
    the family evaluated on the ``m`` sample points.
    """
    A = np.asarray(values, dtype=DTYPE)
    if A.ndim == 1:
        A = A[None, :]
    if A.size == 0:
        raise ValueError("empty value matrix")
    if K < 1:
        raise ValueError("need K >= 1 sign draws")
    F, m = A.shape
    rng = make_rng(seed)
    sups = np.empty(int(K))
    for s in range(0, int(K), chunk):
        k = min(chunk, int(K) - s)
        sigma = rng.integers(0, 2, size=(k, m), dtype=np.int8).astype(DTYPE) * 2.0 - 1.0
        sups[s:s + k] = np.max(sigma @ A.T, axis=1) / m
    stderr = float(np.std(sups, ddof=1) / math.sqrt(K)) if K > 1 else float("nan")
    return RademacherEstimate(float(np.mean(sups)), stderr, int(K), F, m, float(np.max(np.abs(A))))


@dataclass
class LinearClassCheck:
    estimate: float
    bound: float
    stderr: float
    sampled_estimate: float

    @property
    def passed(self):
        return self.estimate <= self.bound * (1.0 + 1e-12) + 1e-15

    @property
    def margin(self):
        return self.bound - self.estimate


def linear_class_bound_check(v_list, w_norm_cap=1.0, K=1000, seed=0, n_random_w=64):
    """Rademacher complexity of ``{(<w, v_i>)_i : ||w|| <= cap}`` vs ``cap * max||v_i|| / sqrt(m)``.

    For each sign draw the supremum over the ball is attained at
    ``w = cap * u / ||u||`` with ``u = sum_i sigma_i v_i``, so the estimate
    uses that exact value.  ``sampled_estimate`` is the same average using
    only random ``w`` on the cap sphere (a lower bound on the exact one).
    """
    V = np.atleast_2d(np.asarray(v_list, dtype=DTYPE))
    if V.shape[0] == 0:
        raise ValueError("need at least one vector")
    m, d = V.shape
    rng = make_rng(seed)
    sigma = rng.integers(0, 2, size=(int(K), m)).astype(DTYPE) * 2.0 - 1.0
    U = sigma @ V
    exact = w_norm_cap * np.linalg.norm(U, axis=1) / m
    W = rng.standard_normal((int(n_random_w), d))
    W *= w_norm_cap / np.maximum(np.linalg.norm(W, axis=1, keepdims=True), 1e-300)
    sampled = np.max(U @ W.T, axis=1) / m
    bound = w_norm_cap * float(np.max(np.linalg.norm(V, axis=1))) / math.sqrt(m)
    se = float(np.std(exact, ddof=1) / math.sqrt(K)) if K > 1 else 0.0
    return LinearClassCheck(float(np.mean(exact)), bound, se, float(np.mean(sampled)))


def estimate_H(model_family, sample, out_idx=0, K=1000, seed=0):
    """Rademacher estimate over a finite family of ``(net0, netT)`` pairs of Taylor residuals.

    Every pair must share the same initialization.
    """
    pairs = list(model_family)
    if not pairs:
        raise ValueError("need at least one model pair")
    X = getattr(sample, "inputs", sample)
    theta0 = None
    rows = []
    for net0, netT in pairs:
        if net0.layout != netT.layout:
            raise ValueError("architecture mismatch inside a model pair")
        flat0 = flatten(net0)
        if theta0 is None:
            theta0 = flat0
        elif flat0.shape != theta0.shape or not np.array_equal(flat0, theta0):
            raise ValueError("all model pairs must share theta_0")
        rows.append(taylor_residuals(net0, netT, X, out_idx)[0])
    return rademacher_mc(np.stack(rows), K, seed)


def max_abs_residual(nets, data, out_idx=0):
    Y = data.targets(nets[0].n_out)[:, out_idx]
    return max(float(np.max(np.abs(forward_batch(n, data.inputs)[0][:, out_idx] - Y))) for n in nets)


def estimate_constants(net0, sample, record=None, loss="squared", out_idx=0, train=None,
                       safety=RESIDUAL_SAFETY):
    """Measure the bound's constants on ``sample`` (plus the training trajectory)."""
    if len(sample) == 0:
        raise ValueError("empty sample")
    loss = get_loss(loss)
    X = sample.inputs
    out0 = forward_batch(net0, X)[0][:, out_idx]
    grads0 = per_sample_gradients(net0, X, out_idx)
    prov = {
        "K_x": "sample supremum",
        "K_theta0": "sample supremum",
        "K_grad0": "sample supremum",
    }
    nets = [net0]
    C_TS, C_GD, C_GD_signed = 0.0, 0.0, 0.0
    if record is not None:
        if record.layout != net0.layout or not np.array_equal(record.theta0, flatten(net0)):
            raise ValueError("record was not started from net0")
        nets = [record.net_at(i) for i in range(len(record.steps))]
        C_GD = float(record.cgd_abs[out_idx])
        C_GD_signed = float(record.cgd_signed[out_idx])
        prov["C_GD"] = "absolute accumulator of the recorded trajectory"
        if record.running_cts and out_idx in record.cts_outputs:
            c = record.cts_outputs.index(out_idx)
            C_TS = float(max(r[c] for r in record.running_cts))
            prov["C_TS"] = "max over checkpoints of the training-set supremum"
        elif train is not None:
            C_TS = float(max(np.max(sample_norms(n, train, (out_idx,))) for n in nets))
            prov["C_TS"] = "max over checkpoints of the training-set supremum (recomputed)"
        else:
            prov["C_TS"] = "not tracked"
        if not record.in_theory:
            prov["C_GD"] += " (out-of-theory optimizer)"
    M = max_abs_residual(nets, sample, out_idx)
    if train is not None:
        M = max(M, max_abs_residual(nets, train, out_idx))
    M *= safety
    prov["K_L"] = prov["B"] = f"loss on |f-y| <= {safety} x observed max over checkpoints"
    return ConstantSet(
        K_L=float(loss.lipschitz(M)),
        B=float(loss.upper_bound(M)),
        K_theta0=float(np.max(np.abs(out0))),
        K_grad0=float(np.max(np.linalg.norm(grads0, axis=1))),
        K_x=float(np.max(np.linalg.norm(X, axis=1))),
        C_TS=C_TS,
        C_GD=C_GD,
        C_GD_signed=C_GD_signed,
        provenance=prov,
    )


@dataclass
class BoundReport:
    constants: ConstantSet
    H: float
    H_stderr: float
    N: int
    delta: float
    log_base: float = math.e
    C1: float = 0.0
    term1: float = 0.0
    term2: float = 0.0
    term3: float = 0.0
    term4: float = 0.0
    rhs: float = 0.0
    observed_gap: float = float("nan")
    train_loss: float = float("nan")
    test_loss: float = float("nan")
    slack: float = float("nan")
    holds: bool = None
    out_idx: int = 0
    flags: list = field(default_factory=list)


def assemble_bound(constants, H_est, N, delta, log_base=math.e, flags=()):
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    if N < 1:
        raise ValueError("N must be >= 1")
    if isinstance(H_est, RademacherEstimate):
        H, H_se = H_est.value, H_est.stderr
    elif isinstance(H_est, tuple):
        H, H_se = H_est
    else:
        H, H_se = float(H_est), 0.0
    c = constants
    C1 = 2.0 * c.K_L * c.K_x * c.K_grad0 * c.C_TS * c.C_GD
    term1 = c.K_L * c.K_theta0
    term2 = C1 / math.sqrt(N)
    term3 = c.K_L * H
    term4 = c.B * math.sqrt(2.0 * math.log(4.0 / delta, log_base) / N)
    rep = BoundReport(c, float(H), float(H_se), int(N), float(delta), float(log_base), C1,
                      term1, term2, term3, term4, term1 + term2 + term3 + term4, flags=list(flags))
    if term1 >= max(term2, term3, term4) and term1 > 0:
        rep.flags.append("term1-dominant")
    return rep


def bound_vs_gap(report, trained_net, train, test, out_idx=0, loss="squared"):
    """Attach ``observed_gap = test loss - train loss`` and the slack of the bound."""
    loss = get_loss(loss)
    n_out = trained_net.n_out

    def mean_loss(d):
        out = forward_batch(trained_net, d.inputs)[0][:, out_idx]
        return float(np.mean(loss.value(out, d.targets(n_out)[:, out_idx])))

    report.train_loss = mean_loss(train)
    report.test_loss = mean_loss(test)
    report.observed_gap = report.test_loss - report.train_loss
    report.slack = report.rhs - report.observed_gap
    report.holds = bool(report.rhs >= report.observed_gap)
    report.out_idx = out_idx
    return report


_FLOAT_FIELDS = ("H", "H_stderr", "delta", "log_base", "C1", "term1", "term2", "term3", "term4",
                 "rhs", "observed_gap", "train_loss", "test_loss", "slack")


def report_items(report):
    """Flat ``(key, text)`` pairs; floats use ``repr`` so they reload bit-exactly."""
    items = []
    for f in fields(ConstantSet):
        if f.name == "provenance":
            continue
        items.append((f.name, repr(float(getattr(report.constants, f.name)))))
    items.append(("N", str(report.N)))
    items.append(("out_idx", str(report.out_idx)))
    for name in _FLOAT_FIELDS:
        items.append((name, repr(float(getattr(report, name)))))
    items.append(("holds", "" if report.holds is None else str(report.holds).lower()))
    items.append(("flags", ";".join(report.flags)))
    for k, v in sorted(report.constants.provenance.items()):
        items.append((f"provenance.{k}", v))
    return items


def dump_report(report):
    return "".join(f"{k} = {v}\n" for k, v in report_items(report))


def dump_report_csv(report):
    items = report_items(report)
    return ",".join(k for k, _ in items) + "\n" + ",".join(v.replace(",", ";") for _, v in items) + "\n"


def load_report(text):
    kv = {}
    for line in text.splitlines():
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        k, _, v = line.partition("=")
        kv[k.strip()] = v.strip()
    prov = {k[len("provenance."):]: v for k, v in kv.items() if k.startswith("provenance.")}
    cs = ConstantSet(**{f.name: float(kv[f.name]) for f in fields(ConstantSet) if f.name != "provenance"},
                     provenance=prov)
    flags = [f for f in kv.get("flags", "").split(";") if f and f != "term1-dominant"]
    rep = assemble_bound(cs, (float(kv["H"]), float(kv["H_stderr"])), int(kv["N"]), float(kv["delta"]),
                         float(kv["log_base"]), flags)
    for name in ("observed_gap", "train_loss", "test_loss", "slack"):
        setattr(rep, name, float(kv[name]))
    rep.out_idx = int(kv.get("out_idx", 0))
    holds = kv.get("holds", "")
    rep.holds = None if holds == "" else holds == "true"
    return rep


def constants_dict(c):
    return {k: v for k, v in asdict(c).items() if k != "provenance"}
