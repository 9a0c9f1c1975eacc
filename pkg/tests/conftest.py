import sys

import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def mc_within(sample_values, target, n_se=3.0):
    """True when the sample mean is within n_se Monte Carlo standard errors of target."""
    v = np.asarray(sample_values, dtype=float)
    se = v.std(ddof=1) / np.sqrt(v.size)
    return abs(v.mean() - target) <= n_se * se


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    report = getattr(mod, "REPORT", None)
    if not report:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(report):
        terminalreporter.write_line(report[k])
