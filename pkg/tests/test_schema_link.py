from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sqlconf.lexer import LexemeKind, lex_sql
from sqlconf.schema_link import canonical_number, extract, links_equal, normalize_name


def test_simple_query():
    links = extract("SELECT COUNT(id) FROM comments WHERE score > 60")
    assert links.tables == {"comments"}
    assert links.columns == {"id", "score"}
    assert links.values == ("60",)
    assert links.heaviness == 4


def test_aliases_are_not_links():
    links = extract("SELECT T1.ID FROM Patient AS T1")
    assert links.tables == {"patient"} and links.columns == {"id"}


def test_join_with_aliases_and_string_value():
    links = extract(
        "SELECT T1.name FROM singer AS T1 JOIN concert T2 ON T1.singer_id = T2.singer_id "
        "WHERE T2.year = '2014'"
    )
    assert links.tables == {"singer", "concert"}
    assert links.columns == {"name", "singer_id", "year"}
    assert links.values == ("2014",)


def test_column_alias_only_dropped_where_it_is_referenced():
    links = extract("SELECT COUNT(*) AS total FROM t ORDER BY total")
    assert "total" not in links.columns
    # an alias reusing a real column name still links the column in SELECT
    links = extract("SELECT price * 2 AS price FROM items")
    assert "price" in links.columns


def test_case_and_quoting_normalized():
    a = extract('SELECT "Name" FROM [Singer] WHERE Age = 1.0')
    b = extract("select name from singer where age = 1")
    assert links_equal(a, b)


def test_no_links():
    links = extract("SELECT 1")
    assert links.tables == frozenset() and links.columns == frozenset()
    assert links.values == ("1",)


def test_normalize_and_canonical_number():
    assert normalize_name("`Foo`") == "foo"
    assert normalize_name("[Bar Baz]") == "bar baz"
    assert canonical_number("1.50") == "1.5"
    assert canonical_number("0x10") == "16"
    assert canonical_number("2e2") == "200"


def test_subquery_and_schema_qualified_table():
    links = extract("SELECT a FROM main.t1 WHERE b IN (SELECT c FROM t2)")
    assert links.tables == {"t1", "t2"}
    assert links.columns == {"a", "b", "c"}


def _upper_outside_literals(sql):
    return "".join(lx.text if lx.kind is LexemeKind.STRING_LITERAL else lx.text.upper() for lx in lex_sql(sql))


CASE_QUERIES = [
    "SELECT name FROM singer WHERE age > 30",
    "select T1.name from singer as T1 join concert as T2 on T1.id = T2.singer_id where T2.year = '2014'",
    "SELECT COUNT(*) FROM Stadium WHERE capacity BETWEEN 5000 AND 10000",
    "SELECT \"Song Name\" FROM singer WHERE country = 'France' ORDER BY age DESC LIMIT 1",
    "SELECT avg(age), max(age) FROM singer GROUP BY country HAVING count(*) > 1",
]


@pytest.mark.parametrize("sql", CASE_QUERIES)
def test_case_invariance(sql):
    assert extract(sql) == extract(_upper_outside_literals(sql))


# (aliased, inlined) pairs
ALIAS_CASES = [
    ("SELECT T1.name FROM singer AS T1", "SELECT singer.name FROM singer"),
    ("SELECT s.name FROM singer s", "SELECT singer.name FROM singer"),
    ("SELECT T1.name FROM singer AS T1 WHERE T1.age > 20", "SELECT singer.name FROM singer WHERE singer.age > 20"),
    ("SELECT T1.name, T2.year FROM singer AS T1 JOIN concert AS T2 ON T1.id = T2.singer_id",
     "SELECT singer.name, concert.year FROM singer JOIN concert ON singer.id = concert.singer_id"),
    ("SELECT a.x FROM t1 a JOIN t2 b ON a.k = b.k WHERE b.y = 3",
     "SELECT t1.x FROM t1 JOIN t2 ON t1.k = t2.k WHERE t2.y = 3"),
    ("SELECT COUNT(*) AS n FROM singer", "SELECT COUNT(*) FROM singer"),
    ("SELECT COUNT(*) AS n FROM singer ORDER BY n", "SELECT COUNT(*) FROM singer ORDER BY COUNT(*)"),
    ("SELECT max(age) AS oldest FROM singer", "SELECT max(age) FROM singer"),
    ("SELECT T1.country, COUNT(*) AS c FROM singer AS T1 GROUP BY T1.country ORDER BY c DESC",
     "SELECT singer.country, COUNT(*) FROM singer GROUP BY singer.country ORDER BY COUNT(*) DESC"),
    ("SELECT p.name FROM people AS p WHERE p.height > 180", "SELECT people.name FROM people WHERE people.height > 180"),
    ("SELECT x.a FROM (SELECT a FROM t) AS x", "SELECT a FROM (SELECT a FROM t)"),
    ("SELECT T2.title FROM author AS T1 JOIN book AS T2 ON T1.aid = T2.aid WHERE T1.name = 'Ann'",
     "SELECT book.title FROM author JOIN book ON author.aid = book.aid WHERE author.name = 'Ann'"),
    ("SELECT S.sid FROM student S WHERE S.gpa >= 3.5", "SELECT student.sid FROM student WHERE student.gpa >= 3.5"),
    ("SELECT e.name, d.name FROM emp e, dept d WHERE e.did = d.did",
     "SELECT emp.name, dept.name FROM emp, dept WHERE emp.did = dept.did"),
    ("SELECT T1.id FROM orders AS T1 WHERE T1.total IN (SELECT T3.total FROM refunds AS T3)",
     "SELECT orders.id FROM orders WHERE orders.total IN (SELECT refunds.total FROM refunds)"),
    ("SELECT avg(T1.price) AS ap FROM item AS T1", "SELECT avg(item.price) FROM item"),
    ("SELECT c.name FROM customer AS c ORDER BY c.name", "SELECT customer.name FROM customer ORDER BY customer.name"),
    ("SELECT DISTINCT T1.city FROM address AS T1", "SELECT DISTINCT address.city FROM address"),
    ("SELECT T1.a FROM t AS T1 WHERE T1.b LIKE '%x%'", "SELECT t.a FROM t WHERE t.b LIKE '%x%'"),
    ("SELECT T1.a, T1.b FROM t AS T1 LIMIT 5", "SELECT t.a, t.b FROM t LIMIT 5"),
    ("SELECT T1.name FROM singer AS T1 WHERE T1.age BETWEEN 20 AND 30",
     "SELECT singer.name FROM singer WHERE singer.age BETWEEN 20 AND 30"),
    ("SELECT m.title FROM movie AS m WHERE m.year = 1999 AND m.rating > 8",
     "SELECT movie.title FROM movie WHERE movie.year = 1999 AND movie.rating > 8"),
    ("SELECT T1.name FROM a AS T1 LEFT JOIN b AS T2 ON T1.k = T2.k WHERE T2.k IS NULL",
     "SELECT a.name FROM a LEFT JOIN b ON a.k = b.k WHERE b.k IS NULL"),
    ("SELECT sum(T1.qty) AS total FROM sales AS T1 GROUP BY T1.region",
     "SELECT sum(sales.qty) FROM sales GROUP BY sales.region"),
    ("SELECT T1.x FROM t AS T1 UNION SELECT T2.x FROM u AS T2", "SELECT t.x FROM t UNION SELECT u.x FROM u"),
    ("SELECT r.id FROM race AS r WHERE r.date > '2001-01-01'", "SELECT race.id FROM race WHERE race.date > '2001-01-01'"),
    ("SELECT count(DISTINCT T1.city) AS n FROM station AS T1", "SELECT count(DISTINCT station.city) FROM station"),
    ("SELECT T1.name FROM pet AS T1 WHERE T1.weight > 10 ORDER BY T1.weight",
     "SELECT pet.name FROM pet WHERE pet.weight > 10 ORDER BY pet.weight"),
    ('SELECT "T1".name FROM singer AS "T1"', "SELECT singer.name FROM singer"),
    ("SELECT T1.name FROM singer T1 WHERE T1.country = 'France' AND T1.age < 40",
     "SELECT singer.name FROM singer WHERE singer.country = 'France' AND singer.age < 40"),
]


def test_alias_suite_size():
    assert len(ALIAS_CASES) == 30


@pytest.mark.parametrize("aliased,inlined", ALIAS_CASES)
def test_alias_soundness(aliased, inlined):
    assert extract(aliased) == extract(inlined)


LINK_QUERIES = CASE_QUERIES + [a for a, _ in ALIAS_CASES[:10]] + [
    "SELECT NAME FROM SINGER WHERE AGE > 30", "SELECT name FROM singer WHERE age > 30.0"]


@settings(max_examples=200, deadline=None)
@given(st.sampled_from(LINK_QUERIES), st.sampled_from(LINK_QUERIES), st.sampled_from(LINK_QUERIES))
def test_links_equal_is_an_equivalence(a, b, c):
    la, lb, lc = extract(a), extract(b), extract(c)
    assert links_equal(la, la)
    assert links_equal(la, lb) == links_equal(lb, la)
    if links_equal(la, lb) and links_equal(lb, lc):
        assert links_equal(la, lc)


def test_equal_links_across_spellings():
    assert links_equal(extract(LINK_QUERIES[-2]), extract(LINK_QUERIES[-1]))
    assert links_equal(extract(CASE_QUERIES[0]), extract(LINK_QUERIES[-1]))
