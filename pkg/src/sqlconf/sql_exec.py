"""Read-only SQLite execution, result comparison, labeling and grounding."""

from __future__ import annotations

import enum
import sqlite3
import threading
import time
from collections import Counter
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, TypeVar

from sqlconf.lexer import LexemeKind, lex_sql, significant

DEFAULT_TIMEOUT = 30.0
REAL_DIGITS = 6
WRITE_REJECTED = "write statement rejected"

_READ_STARTERS = frozenset({"SELECT", "WITH", "VALUES"})
_WRITE_KEYWORDS = frozenset(
    """
    INSERT UPDATE DELETE DROP CREATE ALTER ATTACH DETACH PRAGMA VACUUM REINDEX
    ANALYZE BEGIN COMMIT ROLLBACK SAVEPOINT RELEASE
    """.split()
)
_READ_ACTIONS = frozenset(
    {sqlite3.SQLITE_SELECT, sqlite3.SQLITE_READ, sqlite3.SQLITE_FUNCTION, sqlite3.SQLITE_RECURSIVE}
)


class DatasetError(RuntimeError):
    """The gold query of a dataset example fails to execute."""


class ExecStatus(enum.Enum):
    OK = "Ok"
    SQL_ERROR = "SqlError"
    TIMEOUT = "Timeout"


@dataclass(frozen=True)
class ExecResult:
    status: ExecStatus
    rows: tuple[tuple[Any, ...], ...] = ()
    error_text: str = ""
    elapsed: float = 0.0

    @property
    def ok(self) -> bool:
        return self.status is ExecStatus.OK

    def multiset(self) -> Counter:
        return Counter(self.rows)


class Database:
    """A read-only handle on one SQLite file; executions are serialized."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        if not self.path.is_file():
            raise FileNotFoundError(self.path)
        uri = f"{self.path.resolve().as_uri()}?mode=ro"
        self._conn = sqlite3.connect(uri, uri=True, check_same_thread=False)
        self._conn.execute("PRAGMA query_only = ON")
        self._conn.text_factory = lambda b: b.decode("utf-8", errors="replace")
        self._lock = threading.Lock()

    def close(self) -> None:
        self._conn.close()

    def __enter__(self) -> Database:
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def table_names(self) -> list[str]:
        with self._lock:
            rows = self._conn.execute(
                "SELECT name FROM sqlite_master WHERE type = 'table' "
                "AND name NOT LIKE 'sqlite_%' ORDER BY rowid"
            ).fetchall()
        return [r[0] for r in rows]

    def columns(self, table: str) -> list[str]:
        quoted = table.replace('"', '""')
        with self._lock:
            rows = self._conn.execute(f'PRAGMA table_info("{quoted}")').fetchall()
        return [r[1] for r in rows]

    def sample_rows(self, table: str, limit: int = 3) -> list[tuple]:
        quoted = table.replace('"', '""')
        with self._lock:
            return self._conn.execute(f'SELECT * FROM "{quoted}" LIMIT {int(limit)}').fetchall()

    def run(self, sql: str, timeout: float) -> list[tuple]:
        with self._lock:
            deadline = time.monotonic() + timeout
            self._conn.set_progress_handler(lambda: int(time.monotonic() > deadline), 1000)
            self._conn.set_authorizer(_authorize)
            try:
                return self._conn.execute(sql).fetchall()
            finally:
                self._conn.set_progress_handler(None, 0)
                self._conn.set_authorizer(None)


def _authorize(action: int, *_args) -> int:
    return sqlite3.SQLITE_OK if action in _READ_ACTIONS else sqlite3.SQLITE_DENY


def is_read_only(sql: str) -> bool:
    """Statement-type inspection: a single read query, no DML keywords."""
    lexemes = lex_sql(sql)
    words = [lexemes[i].upper for i in significant(lexemes)
             if lexemes[i].kind is LexemeKind.KEYWORD]
    if not words or words[0] not in _READ_STARTERS:
        return False
    return not any(w in _WRITE_KEYWORDS for w in words)


def canonical_cell(value: Any) -> Any:
    if isinstance(value, float):
        return round(value, REAL_DIGITS) + 0.0  # folds -0.0 into 0.0
    return value


def execute(db: Database, sql: str, timeout: float = DEFAULT_TIMEOUT) -> ExecResult:
    """Execute ``sql`` read-only; failures are reported in the result, never raised."""
    start = time.monotonic()
    if not sql.strip():
        return ExecResult(ExecStatus.SQL_ERROR, error_text="empty query")
    if not is_read_only(sql):
        return ExecResult(ExecStatus.SQL_ERROR, error_text=WRITE_REJECTED)
    try:
        raw = db.run(sql, timeout)
    except sqlite3.OperationalError as exc:
        elapsed = time.monotonic() - start
        if "interrupted" in str(exc):
            return ExecResult(ExecStatus.TIMEOUT, error_text="timeout", elapsed=elapsed)
        return ExecResult(ExecStatus.SQL_ERROR, error_text=str(exc), elapsed=elapsed)
    except (sqlite3.Error, sqlite3.Warning, ValueError, OverflowError) as exc:
        return ExecResult(ExecStatus.SQL_ERROR, error_text=str(exc),
                          elapsed=time.monotonic() - start)
    rows = tuple(tuple(canonical_cell(c) for c in row) for row in raw)
    return ExecResult(ExecStatus.OK, rows=rows, elapsed=time.monotonic() - start)


def results_equal(a: ExecResult, b: ExecResult) -> bool:
    """Row-multiset equality of two successful results; failures never match."""
    return a.ok and b.ok and a.multiset() == b.multiset()


def label(db: Database, generated_sql: str, gold_sql: str,
          timeout: float = DEFAULT_TIMEOUT) -> bool:
    gold = execute(db, gold_sql, timeout)
    if not gold.ok:
        raise DatasetError(f"gold query failed: {gold.error_text}")
    return results_equal(execute(db, generated_sql, timeout), gold)


S = TypeVar("S")


def ground(score: S, result: ExecResult, grounding_on: bool) -> S:
    """Force the confidence of a non-executing query to zero.

    Accepts a :class:`~sqlconf.logit_scoring.MethodScore` or a bare float.
    """
    if not grounding_on or result.ok:
        return score
    if isinstance(score, (int, float)):
        return 0.0
    return replace(score, value=0.0)
