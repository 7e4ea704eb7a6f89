"""Shared pytest plumbing.

Prints one PASS/FAIL line per acceptance criterion after the run so the
verdicts survive output capture and land at the bottom of the log.
"""

import re

_CRITERION = re.compile(r"test_criterion_(\d+)")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    rows = {}
    for outcome, word in (("passed", "PASS"), ("failed", "FAIL"),
                          ("error", "FAIL"), ("skipped", "SKIP")):
        for rep in terminalreporter.stats.get(outcome, []):
            nodeid = getattr(rep, "nodeid", "")
            m = _CRITERION.search(nodeid)
            if m:
                rows[(int(m.group(1)), nodeid)] = word
    if not rows:
        return
    terminalreporter.section("acceptance criteria")
    for (num, nodeid), word in sorted(rows.items()):
        name = nodeid.split("::")[-1]
        terminalreporter.write_line(f"criterion {num:2d}: {word}  {name}")
