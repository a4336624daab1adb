import numpy as np
import pytest

from irr.autodiff import Tape

ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: int, description: str, passed: bool):
    status = "PASS" if passed else "FAIL"
    ACCEPTANCE_LINES.append(f"criterion {number:2d} ({description}): {status}")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


def max_rel_err(a: np.ndarray, b: np.ndarray) -> float:
    """Max elementwise relative error with a floor against near-zero entries."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-2)
    return float(np.max(np.abs(a - b) / denom))


def finite_diff(value_fn, param, eps: float = 1e-6) -> np.ndarray:
    """Central finite differences of a scalar-returning closure wrt a Parameter."""
    grad = np.zeros_like(param.value)
    v = param.value
    for i in range(v.shape[0]):
        for j in range(v.shape[1]):
            orig = v[i, j]
            v[i, j] = orig + eps
            up = value_fn()
            v[i, j] = orig - eps
            down = value_fn()
            v[i, j] = orig
            grad[i, j] = (up - down) / (2.0 * eps)
    return grad


def check_gradients(build_loss, params, tol: float, eps: float = 1e-6) -> float:
    """Compare tape gradients with finite differences for every parameter.

    build_loss(tape) must rebuild the same scalar loss from scratch each
    call (reading current parameter values). Returns the worst error seen.
    """
    for p in params:
        p.zero_grad()
    tape = Tape()
    root = build_loss(tape)
    tape.backward(root)
    analytic = {p.name: p.grad.copy() for p in params}

    def value():
        return build_loss(Tape()).item()

    worst = 0.0
    for p in params:
        fd = finite_diff(value, p, eps)
        err = max_rel_err(analytic[p.name], fd)
        assert err < tol, f"gradient mismatch for {p.name}: {err:.3g} >= {tol}"
        worst = max(worst, err)
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
