import os
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

ACCEPTANCE_RESULTS = {}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def dataset_dir():
    root = os.environ.get("LIFTNET_DATASET_DIR")
    if not root or not Path(root).is_dir():
        pytest.skip("LIFTNET_DATASET_DIR not set; dataset-gated criterion skipped")
    return Path(root)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    key = marker.args[0]
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        status = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[rep.outcome]
        prev = ACCEPTANCE_RESULTS.get(key)
        if prev is None or prev[0] == "PASS" or status == "FAIL":
            ACCEPTANCE_RESULTS[key] = (status, marker.kwargs.get("title", ""))


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title=...): acceptance criterion number")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_RESULTS):
        status, title = ACCEPTANCE_RESULTS[key]
        terminalreporter.write_line(f"criterion {key}: {status}  {title}")
