import re

import pytest

_RESULTS: dict[str, tuple[bool, str]] = {}


class CriterionLog:
    """Records one pass/fail line per acceptance criterion."""

    def __call__(self, name: str, passed: bool, detail: str = ""):
        _RESULTS[name] = (bool(passed), detail)
        print(f"\n[{'PASS' if passed else 'FAIL'}] {name}: {detail}")
        return passed


@pytest.fixture(scope="session")
def criterion():
    return CriterionLog()


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_RESULTS, key=lambda s: int(re.match(r"\d+", s).group())):
        passed, detail = _RESULTS[name]
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {name}  {detail}")
