import math

import numpy as np
import pytest

from qla.model import get_model
from qla.qlik import Observations
from qla.simulate import simulate_path


def sim_obs(name, theta, n, seed=0, key=(0,), T=1.0, substeps=10):
    model = get_model(name)
    scheme = "milstein" if model.m == 1 and model.x_is_y else "euler"
    return model, Observations.from_path(simulate_path(model, n, T, theta, seed, scheme, substeps, key=key))


def scalar_h_n(sigma_fn, x, y, T, theta):
    """Plain-loop reference for the scalar quasi-log-likelihood."""
    n = len(y) - 1
    h = T / n
    total = -0.5 * n * math.log(2 * math.pi * h)
    for k in range(1, n + 1):
        s = sigma_fn(x[k - 1], theta) ** 2
        dy = y[k] - y[k - 1]
        total -= 0.5 * (math.log(s) + dy * dy / (h * s))
    return total


@pytest.fixture(scope="session")
def exp_sin2_obs():
    return sim_obs("exp-sin2", 1.0, 200, seed=11)


@pytest.fixture(scope="session")
def sin_sin_obs():
    return sim_obs("sin-sin", 0.0, 200, seed=12)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(results):
        title, ok, detail = results[num]
        terminalreporter.write_line(f"criterion {num} [{'PASS' if ok else 'FAIL'}] {title}: {detail}")
