import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_configure(config):
    config._acceptance_lines = {}


@pytest.fixture
def criterion(request, capsys):
    """Record and print one PASS/FAIL line per acceptance criterion."""

    def record(num: int, ok: bool, detail: str) -> str:
        line = f"criterion {num:2d} {'PASS' if ok else 'FAIL'}: {detail}"
        request.config._acceptance_lines[num] = line
        with capsys.disabled():
            print(f"\n{line}")
        return line

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config._acceptance_lines
    if lines:
        terminalreporter.section("acceptance criteria")
        for num in sorted(lines):
            terminalreporter.write_line(lines[num])
