"""Collects acceptance-criterion outcomes and prints them after the run."""

from collections import defaultdict

import pytest

_outcomes: dict[int, list[tuple[bool, str]]] = defaultdict(list)


@pytest.fixture
def criterion():
    def record(number: int, ok: bool, detail: str) -> bool:
        _outcomes[number].append((bool(ok), detail))
        print(f"criterion {number}: {'PASS' if ok else 'FAIL'} {detail}")
        return bool(ok)

    return record


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_outcomes):
        checks = _outcomes[number]
        ok = all(c[0] for c in checks)
        detail = "; ".join(d for _, d in checks)
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")
