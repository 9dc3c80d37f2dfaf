"""Primary acceptance criteria at their stated tolerances.

Each criterion prints one PASS/FAIL line (visible with ``pytest -s`` and in
the terminal summary below).
"""
import pytest

from cvsheet.acceptance import REGISTRY, run_criterion

LINES: list[str] = []


@pytest.mark.parametrize("number", sorted(REGISTRY))
def test_criterion(number):
    result = run_criterion(number)
    line = result.line()
    LINES.append(line)
    print(line)
    assert result.passed, line


def test_registry_is_complete():
    assert sorted(REGISTRY) == list(range(1, 10))


def pytest_terminal_summary_lines():
    return list(LINES)
