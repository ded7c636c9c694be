"""Registry for release-gate result lines.

test_acceptance records one line per criterion here; the
pytest_terminal_summary hook in conftest.py echoes them after the test
summary so the gate outcome is visible in any capture mode.
"""

RESULTS: list[str] = []
