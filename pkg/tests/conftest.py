"""Shared fixtures and helpers for the test suite."""

import numpy as np
import pytest

from cesysid.models import LtiModel


def random_stable_lti(rng, n=None, m=None, dt=1.0):
    """Random discrete-time LTI model with spectral radius < 0.95."""
    if n is None:
        n = int(rng.integers(1, 5))
    if m is None:
        m = int(rng.integers(1, 4))
    A = rng.standard_normal((n, n))
    rad = max(abs(np.linalg.eigvals(A)))
    A *= rng.uniform(0.3, 0.95) / max(rad, 1e-12)
    C = rng.standard_normal((m, n))
    return LtiModel(A, C=C, dt=dt)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    try:
        from test_acceptance import _SUMMARY
    except ImportError:
        return
    if _SUMMARY:
        terminalreporter.section("acceptance criteria")
        for line in _SUMMARY:
            terminalreporter.write_line(line)
