import copy
import json

import pytest

from turbo.profiles import example_profiles, example_profiles_path


@pytest.fixture(scope="session")
def profiles():
    return example_profiles()


@pytest.fixture
def profile_doc():
    return copy.deepcopy(json.loads(example_profiles_path().read_text()))


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
