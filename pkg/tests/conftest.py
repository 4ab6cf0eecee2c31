import os
from dataclasses import replace

import pytest
from hypothesis import HealthCheck, settings

from cablewatch import workbench as wb
from cablewatch.scenario import default_scenario

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def small_scenario(n=30, seed=3, **kw):
    scen = default_scenario()
    return replace(scen, seed=seed, run=replace(scen.run, counts=(n, n, n)), **kw)


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("ds") / "dataset"
    wb.simulate(small_scenario(), root)
    return wb.Dataset.open(root)


@pytest.fixture(scope="session")
def small_calibration(small_dataset, tmp_path_factory):
    art = wb.calibrate(small_dataset)
    path = wb.write_json(tmp_path_factory.mktemp("cal") / "calibration.json", art)
    return wb.Calibration.load(path)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_RESULTS: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_RESULTS):
            terminalreporter.write_line(ACCEPTANCE_RESULTS[n])
