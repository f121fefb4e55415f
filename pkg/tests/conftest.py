import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from swarm_mimic.nn.network import NetworkConfig, init_network

settings.register_profile(
    "default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

TINY = NetworkConfig(height=8, width=16, widths=(2, 3), dropout=0.5)


@pytest.fixture
def tiny_net():
    net = init_network(TINY, np.random.default_rng(3))
    rng = np.random.default_rng(4)
    for k, v in net.params.items():
        if k.endswith(".b"):
            net.params[k] = rng.normal(0.0, 0.1, v.shape)
    return net


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
