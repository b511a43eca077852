from __future__ import annotations

import hashlib
import itertools
import random

import pytest

from sqlconf.logit_scoring import Aggregation, Method, MethodScore
from sqlconf.sql_exec import (
    Database, DatasetError, ExecResult, ExecStatus, WRITE_REJECTED, canonical_cell, execute, ground,
    is_read_only, label, results_equal,
)


def test_execute_ok_and_canonical_rows(toy_db_path):
    with Database(toy_db_path) as db:
        r = execute(db, "SELECT name FROM singer WHERE age = 30 ORDER BY id")
        assert r.ok and r.rows == (("Ann",), ("Cid",))


def test_sql_error_is_reported_not_raised(toy_db_path):
    with Database(toy_db_path) as db:
        r = execute(db, "SELECT nope FROM singer")
        assert r.status is ExecStatus.SQL_ERROR and "nope" in r.error_text
        assert execute(db, "   ").status is ExecStatus.SQL_ERROR


def test_writes_rejected(toy_db_path):
    with Database(toy_db_path) as db:
        for sql in ("DELETE FROM singer", "SELECT 1; DROP TABLE singer",
                    "WITH x AS (SELECT 1) INSERT INTO singer(id) SELECT * FROM x",
                    "PRAGMA writable_schema = 1", "ATTACH 'x.db' AS y"):
            r = execute(db, sql)
            assert r.status is ExecStatus.SQL_ERROR, sql
        assert execute(db, "SELECT COUNT(*) FROM singer").rows == ((3,),)
    assert is_read_only("with t as (select 1) select * from t")
    assert not is_read_only("UPDATE singer SET age = 1")


def test_write_rejection_text(toy_db_path):
    with Database(toy_db_path) as db:
        assert execute(db, "DELETE FROM singer").error_text == WRITE_REJECTED


def test_timeout(toy_db_path):
    slow = ("WITH RECURSIVE c(x) AS (SELECT 1 UNION ALL SELECT x + 1 FROM c) "
            "SELECT COUNT(*) FROM c")
    with Database(toy_db_path) as db:
        r = execute(db, slow, timeout=0.2)
        assert r.status is ExecStatus.TIMEOUT
        assert execute(db, "SELECT 1").ok  # handle still usable


def test_canonical_cell():
    assert canonical_cell(0.1 + 0.2) == 0.3
    assert str(canonical_cell(-0.0)) == "0.0"
    assert canonical_cell("x") == "x" and canonical_cell(None) is None


def test_multiset_equality(toy_db_path):
    with Database(toy_db_path) as db:
        a = execute(db, "SELECT age FROM singer ORDER BY id")
        b = execute(db, "SELECT age FROM singer ORDER BY id DESC")
        c = execute(db, "SELECT DISTINCT age FROM singer")
        assert results_equal(a, b) and not results_equal(a, c)
        # 0.1 + 0.2 stored value compares equal to a 0.3 literal after rounding
        assert results_equal(execute(db, "SELECT rating FROM singer WHERE id = 3"), execute(db, "SELECT 0.3"))


def test_label(toy_db_path):
    with Database(toy_db_path) as db:
        assert label(db, "SELECT name FROM singer WHERE id < 3", "SELECT name FROM singer WHERE age <> 30 OR id = 1")
        assert not label(db, "SELECT name FROM singer", "SELECT name FROM singer WHERE id = 1")
        assert not label(db, "SELECT broken", "SELECT 1")
        with pytest.raises(DatasetError):
            label(db, "SELECT 1", "SELECT missing FROM singer")


def test_ground():
    ok = ExecResult(ExecStatus.OK)
    bad = ExecResult(ExecStatus.SQL_ERROR, error_text="x")
    s = MethodScore(Method.SAC, Aggregation.AVERAGE, 0.8, 3)
    assert ground(s, bad, True).value == 0.0
    assert ground(s, bad, False) is s and ground(s, ok, True) is s
    assert ground(0.7, bad, True) == 0.0 and ground(0.7, ok, True) == 0.7


def test_missing_database_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        Database(tmp_path / "none.sqlite")


def test_ground_is_idempotent():
    bad = ExecResult(ExecStatus.TIMEOUT)
    s = MethodScore(Method.FTC, Aggregation.PRODUCT, 0.4, 2)
    assert ground(ground(s, bad, True), bad, True) == ground(s, bad, True)
    assert ground(ground(0.4, bad, True), bad, True) == ground(0.4, bad, True)


def test_results_equal_symmetric_and_transitive(toy_db_path):
    queries = ["SELECT age FROM singer", "SELECT age FROM singer ORDER BY age", "SELECT 30 UNION ALL SELECT 41 UNION ALL SELECT 30",
               "SELECT DISTINCT age FROM singer", "SELECT nope", "SELECT 0.3", "SELECT rating FROM singer WHERE id = 3"]
    with Database(toy_db_path) as db:
        results = [execute(db, q) for q in queries]
    for a, b in itertools.product(results, repeat=2):
        assert results_equal(a, b) == results_equal(b, a)
    for a, b, c in itertools.product(results, repeat=3):
        if results_equal(a, b) and results_equal(b, c):
            assert results_equal(a, c)


FUZZ_PIECES = ["SELECT", "INSERT INTO singer VALUES (9, 'x', 1, 0)", "DELETE FROM singer", "UPDATE singer SET age = 0",
               "DROP TABLE singer", "CREATE TABLE z(a)", "PRAGMA user_version = 5", "VACUUM", "ATTACH ':memory:' AS m",
               "REPLACE INTO concert VALUES (1, 1, 'x')", ";", "*", "name", "FROM", "singer", "WHERE", "age", ">", "1",
               "WITH w AS (SELECT 1)", "(", ")", ",", "'a'", "--", "BEGIN", "COMMIT", "ALTER TABLE singer ADD c"]


def test_execute_never_mutates_database(toy_db_path):
    before = hashlib.sha256(toy_db_path.read_bytes()).hexdigest()
    rng = random.Random(1)
    with Database(toy_db_path) as db:
        for _ in range(1000):
            sql = " ".join(rng.choice(FUZZ_PIECES) for _ in range(rng.randint(1, 8)))
            execute(db, sql, timeout=1.0)
            execute(db, "SELECT 1; " + sql, timeout=1.0)
        assert execute(db, "SELECT COUNT(*) FROM singer").rows == ((3,),)
    assert hashlib.sha256(toy_db_path.read_bytes()).hexdigest() == before
