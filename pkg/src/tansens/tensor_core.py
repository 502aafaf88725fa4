"""Dense float64 arithmetic and seeded random streams.

Everything downstream works on plain ``numpy.ndarray`` values in float64.
Random streams come from :func:`make_rng`, which always uses the
counter-based Philox generator so that a given seed produces the same
stream on every platform numpy supports.  Gaussian draws go through
numpy's ziggurat sampler (``Generator.standard_normal``).
"""

import numpy as np

DTYPE = np.float64
RNG_ALGORITHM = "philox4x64-10"


def make_rng(seed):
    """Return a Philox-backed ``numpy.random.Generator`` for ``seed``."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.Philox(int(seed)))


def spawn(rng, n):
    """Split ``rng`` into ``n`` independent child streams."""
    return [np.random.Generator(np.random.Philox(s)) for s in rng.bit_generator.seed_seq.spawn(n)]


def as_matrix(a):
    a = np.asarray(a, dtype=DTYPE)
    if a.ndim == 1:
        a = a[None, :]
    if a.ndim != 2:
        raise ValueError(f"expected a 2-d matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix has non-finite entries")
    return a


def matmul(a, b):
    a = np.asarray(a, dtype=DTYPE)
    b = np.asarray(b, dtype=DTYPE)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError("matmul expects two 2-d matrices")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"dimension mismatch: {a.shape} @ {b.shape}")
    return a @ b


def gaussian_vector(rng, dim, mean=0.0, std=1.0):
    """Draw ``dim`` i.i.d. normal values; advances ``rng``."""
    if std < 0:
        raise ValueError("std must be nonnegative")
    z = rng.standard_normal(int(dim))
    return mean + std * z


def frobenius_norm(a):
    a = np.asarray(a, dtype=DTYPE)
    return float(np.sqrt(np.sum(a * a)))


def euclidean_norm(v):
    v = np.asarray(v, dtype=DTYPE).ravel()
    return float(np.sqrt(v @ v))
