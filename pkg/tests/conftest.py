import numpy as np
import pytest

from cov2pose import _backend


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: full acceptance criteria (slow)")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(params=["compiled", "python"])
def backend(request, monkeypatch):
    """Run a test once per kernel backend."""
    if request.param == "compiled":
        if _backend.compiled is None:
            pytest.skip("compiled kernels not built")
        monkeypatch.setattr(_backend, "kernels", _backend.compiled)
    else:
        monkeypatch.setattr(_backend, "kernels", _backend.fallback)
    return request.param
