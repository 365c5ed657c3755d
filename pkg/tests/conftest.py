import sys


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """After the run, print the acceptance scorecard (one line per
    criterion) gathered by test_acceptance, if that module ran."""
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "SCORECARD", None) if module else None
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for line in lines:
        terminalreporter.write_line(line)
