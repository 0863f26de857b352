ACCEPTANCE_RESULTS: dict[int, tuple[str, str, float, float]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE_RESULTS):
        status, title, elapsed, limit = ACCEPTANCE_RESULTS[num]
        terminalreporter.write_line(f"[{status}] criterion {num}: {title} ({elapsed:.2f}s, limit {limit:g}s)")
