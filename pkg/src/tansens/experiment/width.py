"""Width sweep of the Taylor residual at a matched displacement budget.

Networks are trained in the NTK scaling: writing ``W_k = (s / sqrt(fan_in_k)) * phi_k``
with ``phi`` the trainable coordinates, full-batch GD on ``phi`` is GD on
the stored weights with the per-entry rate ``eta * s^2 / fan_in_k``.  The
budget ``||phi_T - phi_0|| = radius`` is fixed across widths; the last step
of every run is shortened to land on that sphere.  The Taylor residual is
unchanged by this linear reparametrization, so ``h`` is computed on the
stored weights as usual.

For each width one initialization is trained on several training draws of
the same synthetic task; the runs form the family behind the Rademacher
estimate of the residual.
"""

from dataclasses import dataclass

import numpy as np

from ..bound import estimate_H
from ..data import normalize, synth_blobs
from ..grad_engine import empirical_loss_gradient, get_loss
from ..network import flatten, init_network, unflatten
from ..training import taylor_residuals


@dataclass
class WidthRow:
    width: int
    steps: list
    median_abs_h: float
    max_abs_h: float
    H: float
    H_stderr: float

    def csv_line(self):
        return (f"{self.width},{max(self.steps)},{self.median_abs_h!r},{self.max_abs_h!r},"
                f"{self.H!r},{self.H_stderr!r}")


def ntk_scale(layout, s=np.sqrt(2.0)):
    """Per-parameter factor ``s^2 / fan_in`` (biases get 1)."""
    scale = np.ones(layout.n_params)
    for kind, k, sl, _ in layout.blocks():
        if kind == "W":
            scale[sl] = s * s / layout.dims[k]
    return scale


def train_to_radius(net0, data, eta, radius, scale=None, max_steps=20000, loss="squared"):
    """Preconditioned GD ``theta -= eta * scale * grad`` until the budget is met.

    The displacement is measured as ``||(theta - theta_0) / sqrt(scale)||``,
    the Euclidean norm in the coordinates where the update is plain GD.
    Returns ``(net, steps)``; raises RuntimeError if ``max_steps`` is not enough.
    """
    loss = get_loss(loss)
    theta0 = flatten(net0)
    scale = np.ones_like(theta0) if scale is None else np.asarray(scale, dtype=float)
    root = np.sqrt(scale)
    phi = np.zeros_like(theta0)  # displacement in the GD coordinates
    Y = data.targets(net0.n_out)
    net = net0
    for t in range(1, max_steps + 1):
        _, g, _ = empirical_loss_gradient(net, data.inputs, Y, loss)
        step = eta * root * g
        if np.linalg.norm(phi - step) >= radius:
            # shrink this step's rate so the endpoint sits on the sphere
            a, b, c = step @ step, -2.0 * (phi @ step), phi @ phi - radius**2
            s = (-b + np.sqrt(b * b - 4 * a * c)) / (2 * a)
            return unflatten(net0.layout, theta0 + root * (phi - s * step)), t
        phi = phi - step
        net = unflatten(net0.layout, theta0 + root * phi)
    raise RuntimeError(f"displacement budget {radius} not reached in {max_steps} steps")


def width_sweep(widths=(64, 256, 1024), radius=1.0, depth=2, dim=2, separation=3.0, n_train=100,
                n_sample=200, n_runs=4, eta=0.02, max_steps=20000, K=2000, seed=0):
    """Median ``|h|`` over the held-out sample and the residual's Rademacher estimate, per width."""
    ref = synth_blobs(n_train // 2, dim, separation, seed)
    sample = normalize(synth_blobs(n_sample // 2, dim, separation, seed + 10_000, "test"), reference=ref)
    runs = [normalize(synth_blobs(n_train // 2, dim, separation, seed + r), reference=ref)
            for r in range(n_runs)]
    rows = []
    for w in widths:
        net0 = init_network((dim,) + (w,) * depth + (1,), True, seed)
        scale = ntk_scale(net0.layout)
        family, steps = [], []
        for data in runs:
            netT, t = train_to_radius(net0, data, eta, radius, scale, max_steps)
            family.append((net0, netT))
            steps.append(t)
        h = np.concatenate([taylor_residuals(a, b, sample.inputs)[0] for a, b in family])
        est = estimate_H(family, sample, 0, K, seed)
        rows.append(WidthRow(w, steps, float(np.median(np.abs(h))), float(np.max(np.abs(h))),
                             est.value, est.stderr))
    return rows


def sweep_csv(rows):
    return "width,max_steps,median_abs_h,max_abs_h,H,H_stderr\n" + "".join(r.csv_line() + "\n" for r in rows)
