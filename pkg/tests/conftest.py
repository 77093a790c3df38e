"""Collect acceptance verdict lines and repeat them in the terminal summary."""

CRITERION_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if CRITERION_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(CRITERION_LINES, key=lambda text: int(text.split()[2])):
            terminalreporter.write_line(line)
