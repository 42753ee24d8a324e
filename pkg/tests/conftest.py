from acceptance_log import RESULTS


def pytest_terminal_summary(terminalreporter):
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(RESULTS):
        status, title, seconds = RESULTS[number]
        terminalreporter.write_line(f"criterion {number:2d}: {status}  {title}  ({seconds:.2f} s)")
