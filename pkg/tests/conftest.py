import numpy as np
import pytest

from lpn.icnn import IcnnArch, init_params, lpn_forward, psi


def fd_gradient(fun, x, h=1e-6):
    """Central differences of a scalar function of a flat vector."""
    x = np.asarray(x, dtype=np.float64)
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (fun(x + e) - fun(x - e)) / (2 * h)
    return g


def rel_err(a, b):
    """Max-abs error relative to the max-abs size of the reference ``b``."""
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-12))


def random_model(n, widths=(6, 5), alpha=0.2, beta=3.0, seed=0, bias_scale=0.3):
    """Random params with nonzero biases so every code path is exercised."""
    arch = IcnnArch(n, widths, alpha=alpha, beta=beta)
    p = init_params(arch, seed, "exp_gaussian")
    rng = np.random.default_rng(seed + 100)
    theta = p.theta.copy()
    for name, _ in arch.layout():
        if name.startswith("b"):
            view = p[name]
            start = _offset(arch, name)
            theta[start:start + view.size] = bias_scale * rng.standard_normal(view.size)
    return p.replace(theta)


def _offset(arch, block):
    off = 0
    for name, shape in arch.layout():
        if name == block:
            return off
        off += int(np.prod(shape))
    raise KeyError(block)


@pytest.fixture
def small_model():
    return random_model(3)


# ---------------------------------------------------------------- acceptance report

ACCEPTANCE_LINES: dict[int, str] = {}


def record_criterion(number: int, title: str, passed: bool, detail: str) -> bool:
    """Store and print the one-line verdict for an acceptance criterion."""
    line = f"criterion {number} {'PASS' if passed else 'FAIL'} | {title} | {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[number])
