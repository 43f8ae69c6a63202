import numpy as np
import pytest

from smat import autodiff as ad

# criterion id -> (passed, detail); filled by tests/test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def f64():
    """Helper turning arrays into float64 tensors."""
    return lambda a, grad=False: ad.Tensor(np.asarray(a, dtype=np.float64), requires_grad=grad)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[cid]
        terminalreporter.write_line(f"criterion {cid:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
