import numpy as np
import pytest

_ACCEPTANCE = []


@pytest.fixture
def criterion(request):
    """Record one acceptance line; call with (name, passed, detail). ``passed=None`` marks a skip."""

    def record(name, passed, detail=""):
        _ACCEPTANCE.append((name, None if passed is None else bool(passed), detail))

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in _ACCEPTANCE:
        label = "SKIP" if passed is None else ("PASS" if passed else "FAIL")
        terminalreporter.write_line(f"{label}  {name}  {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def central_difference(model, x, h=1e-5):
    """Finite-difference gradient of log p(x) wrt the flat parameter vector."""
    theta = np.array(model.params.values)
    out = np.empty_like(theta)
    for j in range(theta.size):
        up, down = theta.copy(), theta.copy()
        up[j] += h
        down[j] -= h
        out[j] = (model.with_params(up).log_density(x) - model.with_params(down).log_density(x)) / (2 * h)
    return out


def max_rel_error(analytic, numeric):
    return float(np.max(np.abs(analytic - numeric)) / max(1.0, np.max(np.abs(numeric))))
