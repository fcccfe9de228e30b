import numpy as np
import pytest

from mtsedge.seeding import stream


@pytest.fixture
def rng():
    return stream(1234, "tests")


def make_rng(name):
    """Deterministic per-test stream so tests stay order-independent."""
    return stream(1234, name)


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running end-to-end checks")
