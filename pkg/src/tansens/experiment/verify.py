"""Property suite run by ``tansens verify`` on random small networks."""

import logging
from dataclasses import dataclass

import numpy as np

from ..bound import linear_class_bound_check
from ..data import synth_blobs
from ..grad_engine import param_gradient
from ..network import flatten, init_network, min_abs_preactivation
from ..sensitivity import (LemmaNotApplicable, gradient_perturbation_gap, layerwise_sq_norm, probe_sq_norm,
                           tangent_sensitivity_exact, verify_lemma_relu)
from ..tensor_core import make_rng
from ..training import Schedule, train, w_theta

log = logging.getLogger(__name__)


@dataclass
class PropertyResult:
    name: str
    status: str
    worst: float
    tolerance: float
    trials: int

    def as_dict(self):
        return {"property": self.name, "status": self.status, "worst": self.worst,
                "tolerance": self.tolerance, "trials": self.trials}


def random_dims(rng, n_in=None, max_depth=4, max_width=32, n_out=1):
    depth = int(rng.integers(1, max_depth + 1))
    n_in = int(rng.integers(1, max_width + 1)) if n_in is None else n_in
    hidden = [int(rng.integers(1, max_width + 1)) for _ in range(depth - 1)]
    return (n_in, *hidden, n_out)


def random_net(rng, dims=None, biasless=True, **kw):
    dims = dims or random_dims(rng, **kw)
    net = init_network(dims, biasless, int(rng.integers(2**62)))
    if not biasless:
        for b in net.biases:
            b[:] = rng.standard_normal(b.shape) * 0.5
    return net


def boundary_safe_input(net, rng, margin=1e-3, relative=False, tries=2000):
    """Draw ``x ~ N(0, I)`` until every hidden ``|preactivation|`` clears ``margin``.

    With ``relative=True`` the margin is scaled by ``||x||``.  Returns None
    if no such draw is found.
    """
    for _ in range(tries):
        x = rng.standard_normal(net.n_in)
        thr = margin * np.linalg.norm(x) if relative else margin
        if min_abs_preactivation(net, x[None, :])[0] > thr:
            return x
    return None


def fd_sensitivity(net, x, out_idx=0, h=1e-5):
    cols = []
    for r in range(net.n_in):
        e = np.zeros(net.n_in)
        e[r] = h
        cols.append((param_gradient(net, x + e, out_idx) - param_gradient(net, x - e, out_idx)) / (2 * h))
    return np.stack(cols, axis=1)


def _rel(a, b):
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


def _result(name, values, tol, trials):
    if trials == 0 or not values:
        return PropertyResult(name, "pass", 0.0, tol, 0)
    worst = float(max(values))
    return PropertyResult(name, "pass" if worst <= tol else "fail", worst, tol, trials)


def check_lemma(rng, trials):
    worst = []
    for _ in range(trials):
        net = random_net(rng)
        for _ in range(10):
            worst.append(verify_lemma_relu(net, rng.standard_normal(net.n_in)))
    return _result("lemma_identity", worst, 1e-9, trials)


def check_lemma_biased(rng, trials):
    if trials == 0:
        return PropertyResult("lemma_identity_biased", "pass", 0.0, 0.0, 0)
    net = random_net(rng, biasless=False)
    try:
        verify_lemma_relu(net, rng.standard_normal(net.n_in))
    except LemmaNotApplicable:
        return PropertyResult("lemma_identity_biased", "not-applicable", 0.0, 0.0, 1)
    return PropertyResult("lemma_identity_biased", "fail", 1.0, 0.0, 1)


def check_fd_sensitivity(rng, trials):
    fd_err, lw_err = [], []
    done = 0
    while done < trials:
        net = random_net(rng, max_width=12, max_depth=3)
        x = boundary_safe_input(net, rng)
        if x is None:
            continue
        ts = tangent_sensitivity_exact(net, x)
        fd_err.append(_rel(fd_sensitivity(net, x), ts.matrix) if ts.norm > 0 else 0.0)
        lw = np.sqrt(layerwise_sq_norm(net, x))
        lw_err.append(abs(lw - ts.norm) / max(ts.norm, 1e-300) if ts.norm > 0 else lw)
        done += 1
    return [_result("finite_difference_S", fd_err, 1e-4, trials),
            _result("layerwise_equals_exact", lw_err, 1e-10, trials)]


def check_probes(rng, trials, m=2000):
    z = []
    for i in range(trials):
        net = random_net(rng, n_in=int(rng.integers(8, 25)), max_width=16, max_depth=3)
        x = rng.standard_normal(net.n_in)
        exact = tangent_sensitivity_exact(net, x).norm ** 2
        mean, se = probe_sq_norm(net, x, 0, m, int(rng.integers(2**62)))
        z.append(0.0 if exact == 0 else abs(mean - exact) / se)
    return _result("probe_unbiasedness_z", z, 3.0, trials)


def check_perturbation(rng, trials, m=500):
    err = []
    done = 0
    while done < trials:
        net = random_net(rng, n_in=int(rng.integers(8, 17)), max_width=12, max_depth=3)
        x = boundary_safe_input(net, rng, 0.02, relative=True)
        if x is None:
            continue
        est = gradient_perturbation_gap(net, x, 0, None, m, int(rng.integers(2**62)))
        if est.region_preserving_fraction < 0.95 or est.bound_value == 0:
            continue
        err.append(abs(est.mean_sq_gap - est.bound_value) / est.bound_value)
        done += 1
    return _result("perturbation_sandwich", err, 0.1, trials)


def check_linear_class(rng, trials):
    bad = []
    for _ in range(trials):
        m, d = int(rng.integers(1, 60)), int(rng.integers(1, 20))
        V = rng.standard_normal((m, d)) * rng.uniform(0.1, 3.0, size=(m, 1))
        chk = linear_class_bound_check(V, float(rng.uniform(0.1, 3.0)), 500, int(rng.integers(2**62)))
        bad.append(0.0 if chk.passed else 1.0)
    return _result("linear_class_lemma", bad, 0.0, trials)


def check_gd_displacement(rng, trials, T=100):
    err = []
    for _ in range(trials):
        data = synth_blobs(20, 3, 2.0, int(rng.integers(2**62)))
        net = init_network((3, 8, 1), True, int(rng.integers(2**62)))
        rec = train(net, data, Schedule.constant(0.01, T), "gd", record_every=T, track_cts=False)
        disp = rec.final_params - flatten(net)
        err.append(float(np.linalg.norm(disp + w_theta(rec)) / max(np.linalg.norm(disp), 1e-300)))
    return _result("gd_displacement_identity", err, 1e-10, trials)


def run_suite(seed=0, trials=5):
    if trials == 0:
        log.warning("trials=0: every property passes vacuously")
    rng = make_rng(seed)
    results = [check_lemma(rng, trials), check_lemma_biased(rng, trials)]
    results += check_fd_sensitivity(rng, trials)
    results += [check_probes(rng, trials), check_perturbation(rng, trials),
                check_linear_class(rng, trials), check_gd_displacement(rng, trials)]
    return results
