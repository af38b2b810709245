import pytest

ACCEPTANCE = {}


@pytest.fixture
def accept():
    """Record the verdict of one acceptance criterion for the terminal summary."""

    def record(key, title, passed, detail=""):
        ACCEPTANCE[key] = (title, bool(passed), detail)
        return bool(passed)

    return record


def _order(key):
    number, _, sub = key.partition(".")
    return int(number), sub


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=_order):
        title, passed, detail = ACCEPTANCE[key]
        verdict = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"ACCEPTANCE {key:<4} {verdict}  {title}  ({detail})")
