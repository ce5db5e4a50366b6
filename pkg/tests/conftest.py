import random
import sys

import pytest
from hypothesis import settings

from nsprof.taxonomy import builtin_rules

settings.register_profile("default", deadline=None, max_examples=100)
settings.load_profile("default")


@pytest.fixture
def rng():
    return random.Random(20211)


@pytest.fixture(scope="session")
def ml8():
    return builtin_rules("ml8")


@pytest.fixture(scope="session")
def symbolic():
    return builtin_rules("symbolic")


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    verdicts = getattr(module, "VERDICTS", None)
    if not verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(verdicts):
        terminalreporter.write_line(verdicts[number])
