import importlib.resources
import os

import numpy as np
import pytest

from tansens.data import DATA_ROOT_ENV, MNIST_FILES, find_file, idx_from_pixel_csv
from tansens.tensor_core import make_rng


@pytest.fixture
def rng():
    return make_rng(20240917)


def _mnist5k_csv():
    try:
        path = importlib.resources.files("mlxtend.data") / "data" / "mnist_5k.csv.gz"
    except ModuleNotFoundError:
        return None
    return str(path) if path.is_file() else None


@pytest.fixture(scope="session")
def mnist_root(tmp_path_factory):
    """Directory with MNIST IDX files.

    Uses ``$TANSENS_DATA_ROOT`` when it holds the four files, otherwise
    converts the 5000-image sample shipped with mlxtend.
    """
    root = os.environ.get(DATA_ROOT_ENV)
    if root and all(os.path.exists(find_file(root, f)) for f in MNIST_FILES.values()):
        return root
    csv_path = _mnist5k_csv()
    if csv_path is None:
        pytest.skip("no MNIST data: set TANSENS_DATA_ROOT or install mlxtend")
    out = tmp_path_factory.mktemp("mnist")
    idx_from_pixel_csv(csv_path, str(out))
    return str(out)


def rel_err(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


# acceptance reporting: one line per criterion in the terminal summary
ACCEPTANCE = {}


def record_criterion(number, title, passed, detail):
    ACCEPTANCE[number] = (title, bool(passed), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        title, passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] {number:>2}. {title}: {detail}")
