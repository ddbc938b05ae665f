import numpy as np
import pytest

from fairwin import _kernels


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(params=["python", "cython"])
def backend(request, monkeypatch):
    """Run a test once per Jacobi kernel (skipping the compiled one if unbuilt)."""
    if request.param == "cython":
        if _kernels.compiled_jacobi_sweeps is None:
            pytest.skip("compiled kernel not built")
        monkeypatch.setattr(_kernels, "jacobi_sweeps", _kernels.compiled_jacobi_sweeps)
    else:
        monkeypatch.setattr(_kernels, "jacobi_sweeps", _kernels.python_jacobi_sweeps)
    return request.param


_ACCEPTANCE = []


@pytest.fixture
def verdict():
    """Record and print one acceptance line: ``verdict(tag, ok, detail)``."""
    def record(tag, ok, detail=""):
        status = ok if isinstance(ok, str) else ("PASS" if ok else "FAIL")
        line = f"{tag}: {status}" + (f"  ({detail})" if detail else "")
        _ACCEPTANCE.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)
