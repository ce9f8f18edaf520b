import json
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from nsproj import _kernels  # noqa: E402


@pytest.fixture(scope="session")
def oracle():
    return json.loads((Path(__file__).parent / "oracle_values.json").read_text())


@pytest.fixture(params=["numba", "numpy"])
def kernel_path(request):
    """Run a test on both kernel implementations."""
    if request.param == "numba" and not _kernels.HAVE_NUMBA:
        pytest.skip("numba not installed")
    before = _kernels.numba_enabled()
    _kernels.use_numba(request.param == "numba")
    yield request.param
    _kernels.use_numba(before)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_field(rng, M, scale=1.0, mean=False):
    from nsproj.fourier_torus import SpectralField, basis
    b = basis(M)
    c = rng.standard_normal(b.size) * scale / (1.0 + b.eig)
    if not mean:
        c[b.mean_mask] = 0.0
    return SpectralField(M, c)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for tag in sorted(results, key=lambda t: int(t[1:])):
        terminalreporter.write_line(results[tag])
