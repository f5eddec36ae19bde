import pytest

_ACCEPTANCE: dict = {}


@pytest.fixture
def criterion():
    """``criterion(k, passed, detail)`` records one acceptance line and returns ``passed``."""

    def record(k: int, passed: bool, detail: str) -> bool:
        _ACCEPTANCE[k] = (bool(passed), detail)
        print(f"criterion {k}: {'PASS' if passed else 'FAIL'} {detail}")
        return bool(passed)

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_ACCEPTANCE):
        passed, detail = _ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if passed else 'FAIL'}  {detail}")
