import os
import sys

sys.path.insert(0, os.path.dirname(__file__))

# criterion number -> list of (part, passed, detail), filled by test_acceptance
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        parts = ACCEPTANCE[number]
        status = "PASS" if all(ok for _, ok, _ in parts) else "FAIL"
        detail = "; ".join(f"{part}: {'ok' if ok else 'FAILED'}" + (f" ({text})" if text else "")
                           for part, ok, text in parts)
        terminalreporter.write_line(f"criterion {number:>2}: {status}  {detail}")
