def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """Echo the release-gate lines recorded by test_acceptance.

    Writing straight to stderr does not survive pytest's fd-level
    capture, so the gate results are collected in tests/gate.py and
    printed here, after the normal test summary.
    """
    import gate

    if not gate.RESULTS:
        return
    terminalreporter.section("release gate")
    for line in gate.RESULTS:
        terminalreporter.write_line(line)
