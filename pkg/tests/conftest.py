import numpy as np
import pytest

from actiontext.codec import CodecConfig


@pytest.fixture
def unit_codec():
    """H=1, D=3, B=1000 over [-1, 1] in every dimension."""
    return CodecConfig(1, 3, 1000, ((-1.0, 1.0),) * 3)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def verdict():
    """Record a PASS/FAIL line for an acceptance criterion; echoed in the terminal summary."""

    def record(number: int, name: str, ok: bool, detail: str) -> None:
        line = f"{'PASS' if ok else 'FAIL'} criterion {number:>2} ({name}): {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2])):
            terminalreporter.write_line(line)
