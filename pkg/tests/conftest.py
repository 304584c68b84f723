"""Pytest plumbing: a one-line verdict per acceptance criterion.

The acceptance tests in test_acceptance.py register a PASS/FAIL line as
they run; the summary hook prints them after the run so the verdicts
survive output capture. A criterion that crashed before recording shows
up as FAIL with no detail rather than disappearing.
"""
import re

verdicts: dict[int, str] = {}
_collected: set[int] = set()

_CRITERION = re.compile(r"test_c(\d{2})_")


def pytest_runtest_setup(item):
    # Registered at setup, not collection, so deselected criteria stay silent.
    if "test_acceptance" not in str(item.fspath):
        return
    m = _CRITERION.match(item.name)
    if m:
        _collected.add(int(m[1]))


def pytest_terminal_summary(terminalreporter):
    if not _collected:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_collected):
        terminalreporter.write_line(
            verdicts.get(num, f"criterion {num:2d}: FAIL  no verdict recorded")
        )
