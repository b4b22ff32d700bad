import csv
from pathlib import Path

import pytest

DATA = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def gamma_reference():
    with open(DATA / "gamma_reference.csv") as fh:
        return [(float(r["z"]), float(r["gamma"])) for r in csv.DictReader(fh)]


@pytest.fixture(scope="session")
def special_reference():
    table: dict[str, dict[float, float]] = {}
    with open(DATA / "special_reference.csv") as fh:
        for r in csv.DictReader(fh):
            table.setdefault(r["quantity"], {})[float(r["arg"])] = float(r["value"])
    return table


_ACCEPTANCE: dict[int, tuple[str, bool, str]] = {}


@pytest.fixture
def acceptance():
    """Record the outcome of one acceptance criterion for the summary table."""

    def record(number: int, title: str, ok: bool, detail: str) -> bool:
        _ACCEPTANCE[number] = (title, bool(ok), detail)
        print(f"criterion {number} {'PASS' if ok else 'FAIL'}: {title}: {detail}")
        return bool(ok)

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        title, ok, detail = _ACCEPTANCE[number]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {number:>2}. {title}: {detail}")
