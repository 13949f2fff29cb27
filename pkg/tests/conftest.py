import numpy as np
import pytest
from hypothesis import settings

from helpers import ACCEPTANCE
from pdnr.io import load_case

settings.register_profile("default", max_examples=50, deadline=None)
settings.load_profile("default")

@pytest.fixture(scope="session")
def toy():
    return load_case("toy5.json")


@pytest.fixture(scope="session")
def baran():
    return load_case("baran33.json")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if ok else 'FAIL'}  {detail}")
