import pytest

from bookrank.ledger import generate_synthetic

ACCEPTANCE: list[tuple[str, bool, str]] = []


@pytest.fixture(scope="session")
def small_ledger():
    return generate_synthetic(5, n_reps=6, accounts_per_rep_range=(8, 20))


@pytest.fixture(scope="session")
def ledger42():
    return generate_synthetic(42)


@pytest.fixture
def verdict():
    """Record one acceptance line; the test still asserts on its own."""
    def record(name: str, ok: bool, detail: str = "") -> bool:
        ACCEPTANCE.append((name, bool(ok), detail))
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}" + (f"  [{detail}]" if detail else ""))
