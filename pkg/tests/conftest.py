ACCEPTANCE_LINES = {}


def record_acceptance(ac: int, ok: bool, detail: str) -> str:
    """Store and return one pass/fail line for the terminal summary."""
    line = f"AC{ac:02d} {'PASS' if ok else 'FAIL'}: {detail}"
    ACCEPTANCE_LINES[ac] = line
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for ac in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[ac])
