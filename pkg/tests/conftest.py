"""Shared fixtures, plus a terminal summary with one line per acceptance
criterion (tests tagged ``@pytest.mark.criterion(n, title)``)."""
from __future__ import annotations

import warnings

import numpy as np
import pytest

from sloshlab.geometry import build_disk, build_half_disk, build_rectangle
from sloshlab.spectral import solve

_CRITERIA: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion n")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when not in ("setup", "call"):
        return
    n, title = mark.args
    entry = _CRITERIA.setdefault(n, {"title": title, "ok": True, "details": []})
    if rep.when == "call" or rep.failed:
        entry["ok"] = entry["ok"] and rep.passed
        entry["details"] += [str(v) for k, v in rep.user_properties if k == "detail"]


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        e = _CRITERIA[n]
        tr.write_line(f"AC{n:<2} {'PASS' if e['ok'] else 'FAIL'}  {e['title']}")
        for d in e["details"]:
            tr.write_line(f"       {d}")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def rect_coarse():
    return build_rectangle(np.pi, 1.0, 16, 8)


@pytest.fixture(scope="session")
def disk_coarse():
    return build_disk(8, 32)


@pytest.fixture(scope="session")
def halfdisk_coarse():
    return build_half_disk(6, 24)


@pytest.fixture(scope="session")
def disk_spectrum(disk_coarse):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return solve(disk_coarse, "steklov", 7)
