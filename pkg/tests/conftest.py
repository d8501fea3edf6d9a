import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_loop():
    """One short default-simulation loop run shared by module tests."""
    from biaslab.data import RngSeed
    from biaslab.learners import GbtParams
    from biaslab.loop import LoopConfig, run_loop
    cfg = LoopConfig(batch_size=400, iterations=3, warmup=3, holdout_size=1500, seed=RngSeed(7),
                     gbt=GbtParams(n_trees=30))
    return run_loop(cfg)


def pytest_terminal_summary(terminalreporter):
    from verdicts import LINES
    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
