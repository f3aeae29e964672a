import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

from stcae import _backend, _npkernels  # noqa: E402

try:
    from stcae import _ckernels
except ImportError:  # pragma: no cover - extension not built
    _ckernels = None

BACKENDS = ["numpy"] + (["cython"] if _ckernels is not None else [])


@pytest.fixture(params=BACKENDS)
def backend(request, monkeypatch):
    """Run a test once per available kernel backend."""
    mod = _ckernels if request.param == "cython" else _npkernels
    monkeypatch.setattr(_backend, "kernels", mod)
    monkeypatch.setattr(_backend, "name", request.param)
    return request.param


def pytest_terminal_summary(terminalreporter):
    """Repeat the acceptance criterion lines at the end of the run."""
    mod = next((m for name, m in list(sys.modules.items()) if name.endswith("test_acceptance")), None)
    lines = sorted(getattr(mod, "RESULTS", []))
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
