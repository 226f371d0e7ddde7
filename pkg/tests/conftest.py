import numpy as np
import pytest

from spncs.ltimodel import ExampleParams, assemble_closed_loop, example_fixture


@pytest.fixture(scope="session")
def fixture_parts():
    return example_fixture()


@pytest.fixture(scope="session")
def cl(fixture_parts):
    plant, ctrl, _ = fixture_parts
    return assemble_closed_loop(plant, ctrl)


@pytest.fixture(scope="session")
def dc(fixture_parts):
    return fixture_parts[2]


@pytest.fixture(scope="session")
def params():
    return ExampleParams()


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture
def verdict(request):
    """Record a PASS/FAIL line for an acceptance criterion and print it."""
    lines = request.config.stash.setdefault(ACCEPTANCE_KEY, [])

    def record(label: str, ok: bool, detail: str) -> bool:
        line = f"[{'PASS' if ok else 'FAIL'}] {label}: {detail}"
        lines.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
