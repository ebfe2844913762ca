import sys


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in (f"A{i}" for i in range(1, 9)):
        terminalreporter.write_line(mod.RESULTS.get(key, f"{key} FAIL  (did not complete)"))
