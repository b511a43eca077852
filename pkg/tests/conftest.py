from __future__ import annotations

import sqlite3
from pathlib import Path

import pytest

import sqlconf
from sqlconf.harness import load_config


@pytest.fixture
def toy_db_path(tmp_path):
    path = tmp_path / "toy.sqlite"
    conn = sqlite3.connect(path)
    conn.executescript(
        """
        CREATE TABLE singer (id INTEGER PRIMARY KEY, name TEXT, age INTEGER, rating REAL);
        INSERT INTO singer VALUES (1, 'Ann', 30, 0.1), (2, 'Bob', 41, 0.2), (3, 'Cid', 30, 0.30000000000000004);
        CREATE TABLE concert (id INTEGER PRIMARY KEY, singer_id INTEGER, year TEXT);
        INSERT INTO concert VALUES (1, 1, '2014'), (2, 2, '2015'), (3, 1, '2015');
        """
    )
    conn.commit()
    conn.close()
    return path


FIXTURE_DIR = Path(sqlconf.__file__).parent / "data" / "fixture"


@pytest.fixture
def fixture_config(tmp_path):
    """Load the bundled fixture config with its output redirected into ``tmp_path``."""
    def load(**overrides):
        overrides.setdefault("output_dir", str(tmp_path / "out"))
        return load_config(FIXTURE_DIR / "fixture.cfg", **overrides)
    return load


# -- acceptance reporting --------------------------------------------------------

_CRITERIA: dict[int, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, text): acceptance criterion covered by a test")


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("criterion")
    if marker is None or call.when != "call":
        return
    number, text = marker.args
    passed = call.excinfo is None
    _CRITERIA[number] = ("PASS" if passed else "FAIL", text)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        verdict, text = _CRITERIA[number]
        terminalreporter.write_line(f"criterion {number:2d}: {verdict}  {text}")
