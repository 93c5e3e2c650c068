import numpy as np
import pytest


def rel_error(a, b):
    """Norm-wise relative error, robust to individual near-zero entries."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    # the floor keeps exactly-zero gradients (e.g. a bias feeding BatchNorm) from
    # turning rounding noise into a large ratio
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-7)
    return float(np.linalg.norm(a - b) / denom)


def numeric_grad(f, x, h=1e-3):
    """Central differences of scalar ``f`` with respect to array ``x`` (in place)."""
    g = np.zeros_like(x, dtype=np.float64)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        up = f()
        flat[i] = old - h
        down = f()
        flat[i] = old
        gflat[i] = (up - down) / (2 * h)
    return g


def numeric_grad_smooth(f, signature, x, h=1e-3):
    """Central differences that skip coordinates whose +-h probes cross a kink.

    ``signature()`` returns the discrete state of the last ``f()`` call
    (argmax / nearest-neighbour indices). Returns ``(grad, valid_mask)``.
    """
    g = np.zeros_like(x, dtype=np.float64)
    valid = np.ones(x.shape, dtype=bool)
    f()
    base = signature()
    flat, gflat, vflat = x.reshape(-1), g.reshape(-1), valid.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        up = f()
        s_up = signature()
        flat[i] = old - h
        down = f()
        s_down = signature()
        flat[i] = old
        gflat[i] = (up - down) / (2 * h)
        vflat[i] = s_up == base and s_down == base
    return g, valid


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE_LINES = {}


def record_criterion(number, title, passed, detail=""):
    line = f"criterion {number} [{'PASS' if passed else 'FAIL'}] {title}"
    if detail:
        line += f": {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[number])
