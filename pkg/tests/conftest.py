from __future__ import annotations

import numpy as np
import pytest

from siamese_eeg.encoder import Architecture

# A shrunken network with the same layer geometry, small enough for
# exhaustive finite-difference checks.
TINY = Architecture(n_samples=32, conv_filters=(4, 6, 6), fc_sizes=(16, 12, 10, 8))


@pytest.fixture
def tiny_arch() -> Architecture:
    return TINY


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240611)


# --- acceptance criteria summary ------------------------------------------
#
# Tests tagged ``@pytest.mark.criterion(n, "title")`` are grouped; after the
# run one PASS / FAIL / SKIP line per criterion is printed.

_CRITERIA: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    number, title = mark.args
    entry = _CRITERIA.setdefault(number, {"title": title, "states": []})
    if report.when == "call" or (report.when == "setup" and not report.passed):
        entry["states"].append("skipped" if report.skipped else report.outcome)
        note = getattr(item, "criterion_note", None)
        if note:
            entry.setdefault("notes", []).append(note)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        entry = _CRITERIA[number]
        states = entry["states"]
        if any(s == "failed" for s in states):
            verdict = "FAIL"
        elif states and all(s == "skipped" for s in states):
            verdict = "SKIP"
        elif states:
            verdict = "PASS"
        else:
            verdict = "NOT RUN"
        line = f"AC{number} {verdict}: {entry['title']}"
        notes = entry.get("notes")
        if notes:
            line += " [" + "; ".join(notes) + "]"
        terminalreporter.write_line(line)
