import json
from pathlib import Path

import numpy as np
import pytest

DATA = Path(__file__).parent / "data"

# lines reported by the acceptance suite, printed in the terminal summary
ACCEPTANCE_LINES: list = []


@pytest.fixture(scope="session")
def oracle():
    return json.loads((DATA / "oracle_values.json").read_text())


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
