import sys
from pathlib import Path

# make the shared oracle helpers importable from every test module
sys.path.insert(0, str(Path(__file__).parent))

from verdicts import VERDICTS  # noqa: E402


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(VERDICTS):
        verdict = "PASS" if VERDICTS[num] else "FAIL"
        terminalreporter.write_line(f"[criterion {num:02d}] {verdict}")
