"""Prints one PASS/FAIL line per acceptance criterion after the run."""

_ACCEPTANCE_RESULTS = {}


def pytest_runtest_makereport(item, call):
    if call.when != "call" or "test_acceptance" not in str(item.fspath):
        return
    name = item.name
    outcome = "FAIL" if call.excinfo is not None else "PASS"
    _ACCEPTANCE_RESULTS[name] = outcome


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _ACCEPTANCE_RESULTS:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for name, outcome in sorted(_ACCEPTANCE_RESULTS.items()):
        terminalreporter.write_line(f"{outcome}  {name}")
