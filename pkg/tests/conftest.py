import numpy as np
import pytest

from come.datasets import karate_club

ACCEPTANCE_LINES: list[str] = []


def report(name: str, ok: bool, detail: str) -> str:
    line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def karate():
    return karate_club()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
