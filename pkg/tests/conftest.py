import pytest

from helpers import kitchen_task


@pytest.fixture
def kitchen():
    return kitchen_task()


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(RESULTS):
        checks = RESULTS[n]
        verdict = "PASS" if all(ok for ok, _ in checks) else "FAIL"
        terminalreporter.write_line(f"criterion {n}: {verdict}  " + "; ".join(d for _, d in checks))
