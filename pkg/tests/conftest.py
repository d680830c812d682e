import pytest


def pytest_configure(config):
    config._acceptance_lines = []


@pytest.fixture
def report(request):
    """report(number, ok, detail, seconds, budget) records one criterion line."""

    def _report(number, ok, detail, seconds, budget):
        status = "PASS" if ok else "FAIL"
        line = f"criterion {number:>2}: {status}  {detail}  [{seconds:.1f}s / budget {budget:.0f}s]"
        request.config._acceptance_lines.append((number, line))
        print(line)
        return ok

    return _report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
