"""Tangent sensitivity of ReLU networks and a trajectory-based generalization bound."""

from .network import Network, flatten, forward, init_network, unflatten
from .sensitivity import avg_ts_norm, tangent_sensitivity_exact, ts_frobenius_norm

__version__ = "0.1.0"

__all__ = ["Network", "avg_ts_norm", "flatten", "forward", "init_network", "tangent_sensitivity_exact",
           "ts_frobenius_norm", "unflatten"]
