import pytest

# criterion number -> printed line, filled by the acceptance suite
ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def criterion():
    def record(num: int, ok: bool, detail: str):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {num:>2}: {detail}"
        ACCEPTANCE[num] = line
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for num in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[num])
