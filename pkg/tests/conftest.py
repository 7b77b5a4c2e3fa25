"""Shared pytest hooks: echo acceptance verdicts in the terminal summary.

The acceptance tests print one pass/fail line per criterion; with output
capture enabled those prints are only shown for failing tests, so the
lines are also collected here and replayed after the run.
"""

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
