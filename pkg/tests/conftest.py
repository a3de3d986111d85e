import numpy as np
import pytest

from tamedlevy.model import Horizon, SdeProblem, cubic_jump, uniform_marks, zero_problem
from tamedlevy.taming import TamingConfig, TamingMode

_ACCEPTANCE = []


@pytest.fixture
def cubic():
    return cubic_jump()


@pytest.fixture
def eq16():
    """Taming used by the reproduced experiment: |x|^chi denominator with chi = 2."""
    return TamingConfig(TamingMode.DETERMINISTIC_CHI, chi=2.0)


@pytest.fixture
def zero():
    return zero_problem()


@pytest.fixture
def acceptance_log():
    return _ACCEPTANCE


def linear_2d(horizon=Horizon(0.0, 1.0)):
    """Two-dimensional test problem with a full 2x2 diffusion matrix and vector marks."""
    A = np.array([[-1.0, 0.5], [0.2, -2.0]])
    S = np.array([[0.3, 0.1], [0.0, 0.4]])

    def drift(t, x):
        return np.sum(A * x[..., None, :], axis=-1) - x * np.sum(x * x, axis=-1, keepdims=True)

    def diffusion(t, x):
        return x[..., :, None] * S

    def jump(t, x, z):
        return x * z

    marks = uniform_marks(-0.25, 0.25, 3.0)

    def sampler(rng, size):
        return rng.uniform(-0.25, 0.25, (size, 2))

    from dataclasses import replace
    marks2 = replace(marks, mark_sampler=sampler, mark_mean=(0.0, 0.0), mark_second_moment=2 / 48)
    return SdeProblem(2, 2, drift, diffusion, jump, marks2, lambda t, x: np.zeros_like(x),
                      np.array([1.0, -0.5]), horizon, chi=2.0, name="linear-2d")


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in _ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
