"""Shared pytest plumbing: the acceptance-criteria result registry.

Acceptance tests record one verdict per criterion; the summary hook prints
one pass/fail line each at the end of the run, so the outcome is visible
without digging through captured output.
"""
from __future__ import annotations

CRITERIA: dict[int, tuple[str, bool, str]] = {}


def record_criterion(number: int, name: str, ok: bool, detail: str) -> None:
    CRITERIA[number] = (name, ok, detail)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not CRITERIA:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for number in sorted(CRITERIA):
        name, ok, detail = CRITERIA[number]
        verdict = "PASS" if ok else "FAIL"
        tr.write_line(f"criterion {number:2d} ({name}): {verdict} — {detail}")
