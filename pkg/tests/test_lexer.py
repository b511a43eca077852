from __future__ import annotations

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sqlconf.lexer import (
    AlignmentMismatch, LexemeKind as K, Role, TokenRecord, align, classify_roles, lex_sql,
    lexeme_probability, redundant_parens, removal_preserves_lexing, significant,
)
from sqlconf.schema_link import extract


def kinds(sql):
    return [(lx.text, lx.kind) for lx in lex_sql(sql) if lx.kind is not K.WHITESPACE]


def toks(*pieces, p=0.9):
    return [TokenRecord(t, p) for t in pieces]


def test_basic_kinds():
    assert kinds("SELECT a, b FROM t") == [
        ("SELECT", K.KEYWORD), ("a", K.IDENTIFIER), (",", K.PUNCTUATION),
        ("b", K.IDENTIFIER), ("FROM", K.KEYWORD), ("t", K.IDENTIFIER),
    ]


def test_maximal_munch_operators():
    assert [t for t, _ in kinds("a!=b<>c<=d->>e||f")] == ["a", "!=", "b", "<>", "c", "<=", "d", "->>", "e", "||", "f"]


def test_literals_and_quotes():
    got = kinds("""SELECT 'it''s', "Col""x", `b`, [c d], 1.5e3, 0x1F, .5 FROM t""")
    assert ("'it''s'", K.STRING_LITERAL) in got
    assert ('"Col""x"', K.QUOTED_IDENTIFIER) in got
    assert ("`b`", K.QUOTED_IDENTIFIER) in got
    assert ("[c d]", K.QUOTED_IDENTIFIER) in got
    assert ("1.5e3", K.NUMERIC_LITERAL) in got and ("0x1F", K.NUMERIC_LITERAL) in got
    assert (".5", K.NUMERIC_LITERAL) in got


def test_keywords_case_insensitive_and_comments():
    lx = lex_sql("select x -- tail\n/* block */from y")
    assert lx[0].kind is K.KEYWORD
    assert [l.kind for l in lx if l.kind is K.COMMENT] == [K.COMMENT, K.COMMENT]


def test_unterminated_string_runs_to_end():
    lx = lex_sql("SELECT 'abc")
    assert lx[-1].text == "'abc" and lx[-1].kind is K.STRING_LITERAL


def test_spans_are_character_offsets():
    sql = "SELECT 'é' FROM t"
    for lx in lex_sql(sql):
        assert sql[lx.span[0]:lx.span[1]] == lx.text


SQLISH = st.lists(
    st.one_of(
        st.sampled_from(["SELECT", "from", "Where", " ", "\n", "\t", ",", "(", ")", "'", '"', "`", "[", "]",
                         "--", "/*", "*/", "!=", "<>", "=", "<", ">", "|", "-", ".", "1", "2.5", "e", "x",
                         "T1", "é", ";", "0x", "*"]),
        st.text(max_size=4),
    ),
    max_size=25,
).map("".join)


@settings(max_examples=300, deadline=None)
@given(SQLISH)
def test_roundtrip_property(sql):
    lexemes = lex_sql(sql)
    assert "".join(lx.text for lx in lexemes) == sql
    pos = 0
    for lx in lexemes:
        assert lx.span == (pos, pos + len(lx.text)) and lx.text
        pos += len(lx.text)


def test_align_straddling_token_goes_to_both_lexemes():
    lexemes = align(toks("SEL", "ECT", " a", "b"), lex_sql("SELECT ab"))
    assert [lx.token_indices for lx in lexemes] == [(0, 1), (2,), (2, 3)]


def test_align_mismatch_raises():
    with pytest.raises(AlignmentMismatch):
        align(toks("SELECT", " b"), lex_sql("SELECT a"))


def test_align_zero_length_token():
    # offset 6 is where the whitespace lexeme starts
    lexemes = align(toks("SELECT", "", " a"), lex_sql("SELECT a"))
    assert [lx.token_indices for lx in lexemes] == [(0,), (1, 2), (2,)]


@settings(max_examples=200, deadline=None)
@given(SQLISH.filter(bool), st.data())
def test_alignment_totality(sql, data):
    cuts = sorted(data.draw(st.sets(st.integers(1, max(len(sql) - 1, 1)), max_size=8)))
    cuts = [c for c in cuts if c < len(sql)]
    pieces = [sql[a:b] for a, b in zip([0, *cuts], [*cuts, len(sql)])]
    lexemes = align(toks(*pieces), lex_sql(sql))
    covered = {i for lx in lexemes for i in lx.token_indices}
    assert covered == set(range(len(pieces)))
    assert all(lx.token_indices for lx in lexemes)


def test_lexeme_probability_is_token_product():
    tokens = [TokenRecord("SEL", 0.5), TokenRecord("ECT", 0.4)]
    lexemes = align(tokens, lex_sql("SELECT"))
    assert lexeme_probability(lexemes[0], tokens) == pytest.approx(0.2)


def test_token_record_inserts_chosen_candidate():
    t = TokenRecord("a", 0.5, (("b", 0.3),))
    assert ("a", 0.5) in t.candidates
    with pytest.raises(ValueError):
        TokenRecord("a", 0.5, (("b", 0.6),))
    with pytest.raises(ValueError):
        TokenRecord("a", 0.0)


def _paren_texts(sql):
    lexemes = lex_sql(sql)
    return sorted((lexemes[i].span[0], lexemes[i].text) for i in redundant_parens(lexemes))


def test_redundant_parens_detected():
    assert len(_paren_texts("SELECT a FROM t WHERE (x = 1)")) == 2
    assert len(_paren_texts("SELECT ((y)) FROM t")) == 4
    assert len(_paren_texts("SELECT a FROM t ORDER BY (z)")) == 2


def test_syntactic_parens_kept():
    for sql in ("SELECT COUNT(x) FROM t", "SELECT a FROM t WHERE b IN (1, 2)",
                "SELECT a FROM (SELECT a FROM t)", "SELECT a FROM t WHERE (x = 1) AND y = 2",
                "SELECT (a + b) * c FROM t", "INSERT INTO t (a) VALUES (1)",
                "SELECT a FROM t WHERE NOT (x = 1 OR y = 2) AND z"):
        assert _paren_texts(sql) == [], sql


def test_removal_needs_stable_relexing():
    # dropping the parens would glue the two words together
    lexemes = lex_sql("SELECT a FROM t WHERE(x)OR y")
    o = next(i for i, lx in enumerate(lexemes) if lx.text == "(")
    c = next(i for i, lx in enumerate(lexemes) if lx.text == ")")
    assert not removal_preserves_lexing(lexemes, o, c)
    assert o not in redundant_parens(lexemes)


def test_classify_roles():
    sql = "SELECT COUNT(id) AS n FROM comments WHERE score > 60;"
    lexemes = lex_sql(sql)
    roles = dict(zip((lx.text for lx in lexemes), classify_roles(lexemes, extract(sql))))
    assert roles["COUNT"] is Role.CRITICAL_KEYWORD
    assert roles["id"] is Role.SCHEMA_LINKED and roles["comments"] is Role.SCHEMA_LINKED
    assert roles["AS"] is Role.EXCLUDABLE and roles[";"] is Role.EXCLUDABLE
    assert roles[">"] is Role.COMPARISON_OPERATOR
    assert roles["60"] is Role.LITERAL
    assert roles["n"] is Role.OTHER
    assert roles[" "] is Role.EXCLUDABLE


def test_significant_skips_trivia():
    lexemes = lex_sql("SELECT /*c*/ a")
    assert [lexemes[i].text for i in significant(lexemes)] == ["SELECT", "a"]


OPERATORS = ["!=", "<>", "<=", ">=", "==", "<<", ">>", "||", "->", "->>", "=", "<", ">", "+", "-", "*", "/", "%",
             "&", "|", "~", "!"]


@settings(max_examples=300, deadline=None)
@given(st.lists(st.sampled_from(OPERATORS + ["a", " ", "1"]), max_size=20).map("".join))
def test_maximal_munch_property(sql):
    lexemes = lex_sql(sql)
    known = {lx.text for op in OPERATORS for lx in lex_sql(op) if lx.kind is K.OPERATOR}
    for a, b in zip(lexemes, lexemes[1:]):
        if a.kind is K.OPERATOR and b.kind is K.OPERATOR:
            assert a.text + b.text not in known


def test_classification_is_deterministic():
    sql = "SELECT T1.name, COUNT(*) AS n FROM singer AS T1 WHERE T1.age >= 30 GROUP BY T1.name;"
    lexemes, links = lex_sql(sql), extract(sql)
    assert classify_roles(lexemes, links) == classify_roles(lex_sql(sql), extract(sql))
    assert classify_roles(lexemes, links) == classify_roles(lexemes, links)


def _paren_pairs(lexemes, indices):
    stack, pairs = [], []
    for i, lx in enumerate(lexemes):
        if lx.kind is K.PUNCTUATION and lx.text == "(":
            stack.append(i)
        elif lx.kind is K.PUNCTUATION and lx.text == ")" and stack:
            o = stack.pop()
            if o in indices or i in indices:
                pairs.append((o, i))
    return pairs


def _relex_without(sql, lexemes, o, c):
    """Oracle: cut the two characters out of the text and lex again, whitespace runs merged."""
    a, b = lexemes[o].span[0], lexemes[c].span[0]
    stripped = sql[:a] + sql[a + 1:b] + sql[b + 1:]
    expected = [lx for k, lx in enumerate(lexemes) if k not in (o, c)]

    def merged(seq):
        out = []
        for lx in seq:
            if out and lx.kind is K.WHITESPACE and out[-1][0] is K.WHITESPACE:
                out[-1] = (K.WHITESPACE, out[-1][1] + lx.text)
            else:
                out.append((lx.kind, lx.text))
        return out

    return merged(lex_sql(stripped)) == merged(expected)


PAREN_BASES = [
    "SELECT a FROM t WHERE {e}",
    "SELECT {e} FROM t",
    "SELECT a FROM t ORDER BY {e}",
    "SELECT a FROM t WHERE b = 1 AND {e}",
    "SELECT a FROM t GROUP BY a HAVING {e}",
    "SELECT COUNT({e}) FROM t",
    "SELECT a FROM t WHERE b IN (1, {e})",
]
PAREN_EXPRS = ["x = 1", "(x = 1)", "x", "(x)", "x + 1", "(x) * 2", "-(y)", "((z))", "x = (SELECT 1)",
               "NOT (x = 1)", "(x = 1 OR y = 2)", "(a)||(b)", "'(' || x", "x BETWEEN (1) AND 2"]


def _paren_cases():
    rng = random.Random(17)
    cases = set()
    while len(cases) < 50:
        base, expr = rng.choice(PAREN_BASES), rng.choice(PAREN_EXPRS)
        if rng.random() < 0.5:
            expr = f"({expr})"
        if rng.random() < 0.3:
            expr = expr.replace(" ", "  ")
        cases.add(base.format(e=expr))
    return sorted(cases)


def test_redundancy_detector_satisfies_definition_on_50_cases():
    cases = _paren_cases()
    assert len(cases) == 50
    flagged_total = 0
    for sql in cases:
        lexemes = lex_sql(sql)
        flagged = redundant_parens(lexemes)
        for o, c in _paren_pairs(lexemes, flagged):
            assert o in flagged and c in flagged, sql  # flags come in matched pairs
            assert _relex_without(sql, lexemes, o, c), sql
            flagged_total += 1
    assert flagged_total >= 20
