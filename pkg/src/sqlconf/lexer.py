"""Grammar-free SQL lexing and alignment with an LLM's subword token stream.

Lexing is total: every input string, however malformed, is covered by a
sequence of lexemes whose texts concatenate back to the input.  Keywords are
matched case-insensitively against the SQLite reserved-word list.
"""

from __future__ import annotations

import bisect
import enum
import math
import re
from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING, Iterable, Sequence

if TYPE_CHECKING:
    from sqlconf.schema_link import SchemaLinks


class AlignmentMismatch(ValueError):
    """Token texts do not concatenate to the lexed SQL."""


SQLITE_KEYWORDS = frozenset(
    """
    ABORT ACTION ADD AFTER ALL ALTER ALWAYS ANALYZE AND AS ASC ATTACH
    AUTOINCREMENT BEFORE BEGIN BETWEEN BY CASCADE CASE CAST CHECK COLLATE
    COLUMN COMMIT CONFLICT CONSTRAINT CREATE CROSS CURRENT CURRENT_DATE
    CURRENT_TIME CURRENT_TIMESTAMP DATABASE DEFAULT DEFERRABLE DEFERRED DELETE
    DESC DETACH DISTINCT DO DROP EACH ELSE END ESCAPE EXCEPT EXCLUDE EXCLUSIVE
    EXISTS EXPLAIN FAIL FILTER FIRST FOLLOWING FOR FOREIGN FROM FULL GENERATED
    GLOB GROUP GROUPS HAVING IF IGNORE IMMEDIATE IN INDEX INDEXED INITIALLY
    INNER INSERT INSTEAD INTERSECT INTO IS ISNULL JOIN KEY LAST LEFT LIKE LIMIT
    MATCH MATERIALIZED NATURAL NO NOT NOTHING NOTNULL NULL NULLS OF OFFSET ON
    OR ORDER OTHERS OUTER OVER PARTITION PLAN PRAGMA PRECEDING PRIMARY QUERY
    RAISE RANGE RECURSIVE REFERENCES REGEXP REINDEX RELEASE RENAME REPLACE
    RESTRICT RETURNING RIGHT ROLLBACK ROW ROWS SAVEPOINT SELECT SET TABLE TEMP
    TEMPORARY THEN TIES TO TRANSACTION TRIGGER UNBOUNDED UNION UNIQUE UPDATE
    USING VACUUM VALUES VIEW VIRTUAL WHEN WHERE WINDOW WITH WITHOUT
    """.split()
)

# Longest first so alternation order implements maximal munch.
OPERATORS = (
    "->>", "->", "||", "<<", ">>", "<=", ">=", "==", "!=", "<>",
    "=", "<", ">", "+", "-", "*", "/", "%", "&", "|", "~",
)
COMPARISON_OPERATORS = frozenset({"=", "==", "!=", "<>", "<", ">", "<=", ">="})
AGGREGATE_FUNCTIONS = frozenset({"COUNT", "SUM", "AVG", "MIN", "MAX"})
CRITICAL_KEYWORDS = frozenset(
    """
    JOIN ON WHERE GROUP BY HAVING ORDER LIMIT SELECT FROM DISTINCT AND OR NOT
    IN BETWEEN LIKE CASE WHEN THEN ELSE END
    """.split()
)
OPTIONAL_KEYWORDS = frozenset({"AS", "INNER", "OUTER", "ASC"})
SET_OPERATORS = frozenset({"UNION", "INTERSECT", "EXCEPT"})


class LexemeKind(enum.Enum):
    KEYWORD = "Keyword"
    IDENTIFIER = "Identifier"
    QUOTED_IDENTIFIER = "QuotedIdentifier"
    STRING_LITERAL = "StringLiteral"
    NUMERIC_LITERAL = "NumericLiteral"
    OPERATOR = "Operator"
    PUNCTUATION = "Punctuation"
    WHITESPACE = "Whitespace"
    COMMENT = "Comment"


class Role(enum.Enum):
    SCHEMA_LINKED = "SchemaLinked"
    CRITICAL_KEYWORD = "CriticalKeyword"
    COMPARISON_OPERATOR = "ComparisonOperator"
    LITERAL = "Literal"
    EXCLUDABLE = "Excludable"
    OTHER = "Other"


TRIVIA = frozenset({LexemeKind.WHITESPACE, LexemeKind.COMMENT})
NAME_KINDS = frozenset({LexemeKind.IDENTIFIER, LexemeKind.QUOTED_IDENTIFIER})
LITERAL_KINDS = frozenset({LexemeKind.STRING_LITERAL, LexemeKind.NUMERIC_LITERAL})


@dataclass(frozen=True)
class TokenRecord:
    """One generated subword token with its top-k alternatives.

    ``candidates`` always contains the chosen token; it is inserted when the
    caller's list omits it.
    """

    text: str
    prob: float
    candidates: tuple[tuple[str, float], ...] = ()

    def __post_init__(self) -> None:
        if not (0.0 < self.prob <= 1.0):
            raise ValueError(f"token probability out of (0, 1]: {self.prob!r}")
        cands = tuple((str(t), float(p)) for t, p in self.candidates)
        if not any(t == self.text for t, _ in cands):
            cands = ((self.text, self.prob),) + cands
        else:
            cands = tuple(
                (t, self.prob) if t == self.text else (t, p) for t, p in cands
            )
        if math.fsum(p for _, p in cands) > 1.0 + 1e-9:
            raise ValueError(f"candidate probabilities of {self.text!r} sum above 1")
        object.__setattr__(self, "candidates", cands)


@dataclass(frozen=True)
class Lexeme:
    text: str
    kind: LexemeKind
    span: tuple[int, int]
    token_indices: tuple[int, ...] = field(default=())

    @property
    def upper(self) -> str:
        return self.text.upper()


_LEX_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<comment>--[^\n]*|/\*.*?(?:\*/|\Z))
  | (?P<string>'(?:[^']|'')*(?:'|\Z))
  | (?P<qident>"(?:[^"]|"")*(?:"|\Z)|`(?:[^`]|``)*(?:`|\Z)|\[[^\]]*(?:\]|\Z))
  | (?P<number>0[xX][0-9a-fA-F]+|(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<word>[^\W\d]\w*)
  | (?P<op>"""
    + "|".join(re.escape(op) for op in OPERATORS)
    + r""")
  | (?P<other>.)
    """,
    re.VERBOSE | re.DOTALL,
)

_GROUP_KIND = {
    "ws": LexemeKind.WHITESPACE,
    "comment": LexemeKind.COMMENT,
    "string": LexemeKind.STRING_LITERAL,
    "qident": LexemeKind.QUOTED_IDENTIFIER,
    "number": LexemeKind.NUMERIC_LITERAL,
    "op": LexemeKind.OPERATOR,
    "other": LexemeKind.PUNCTUATION,
}


def lex_sql(sql: str) -> list[Lexeme]:
    """Split ``sql`` into maximal-munch lexemes covering the whole input."""
    out: list[Lexeme] = []
    pos = 0
    while pos < len(sql):
        m = _LEX_RE.match(sql, pos)
        assert m is not None  # the `other` branch matches any character
        group = m.lastgroup
        text = m.group()
        if group == "word":
            kind = (
                LexemeKind.KEYWORD
                if text.upper() in SQLITE_KEYWORDS
                else LexemeKind.IDENTIFIER
            )
        else:
            kind = _GROUP_KIND[group]
        out.append(Lexeme(text, kind, (pos, m.end())))
        pos = m.end()
    return out


def significant(lexemes: Sequence[Lexeme]) -> list[int]:
    """Indices of lexemes that are neither whitespace nor comments."""
    return [i for i, lx in enumerate(lexemes) if lx.kind not in TRIVIA]


def align(tokens: Sequence[TokenRecord], lexemes: Sequence[Lexeme]) -> list[Lexeme]:
    """Attach to each lexeme the indices of the tokens overlapping it.

    A token straddling a lexeme boundary is attached to every lexeme it
    touches.  Zero-length tokens attach to the lexeme at their offset.
    """
    token_text = "".join(t.text for t in tokens)
    lexed_text = "".join(lx.text for lx in lexemes)
    if token_text != lexed_text:
        raise AlignmentMismatch(
            f"token text {token_text[:60]!r} does not match SQL {lexed_text[:60]!r}"
        )
    if not lexemes:
        return []
    starts = [lx.span[0] for lx in lexemes]
    buckets: list[list[int]] = [[] for _ in lexemes]
    offset = 0
    for ti, tok in enumerate(tokens):
        begin, end = offset, offset + len(tok.text)
        offset = end
        li = max(bisect.bisect_right(starts, begin) - 1, 0)
        if begin == end:
            buckets[li].append(ti)
            continue
        while li < len(lexemes) and lexemes[li].span[0] < end:
            buckets[li].append(ti)
            li += 1
    return [replace(lx, token_indices=tuple(b)) for lx, b in zip(lexemes, buckets)]


def lexeme_probability(lexeme: Lexeme, tokens: Sequence[TokenRecord]) -> float:
    """Product of the probabilities of the tokens covering ``lexeme``."""
    return math.prod(tokens[i].prob for i in lexeme.token_indices)


def _matching_parens(lexemes: Sequence[Lexeme], sig: list[int]) -> dict[int, int]:
    """Map positions in ``sig`` of each '(' to the position of its ')'."""
    stack: list[int] = []
    pairs: dict[int, int] = {}
    for pos, i in enumerate(sig):
        text = lexemes[i].text
        if text == "(":
            stack.append(pos)
        elif text == ")" and stack:
            pairs[stack.pop()] = pos
    return pairs


# Keywords after which a parenthesis can only be grouping, never syntax.
_GROUPING_AFTER = frozenset(
    {"WHERE", "ON", "HAVING", "WHEN", "THEN", "ELSE", "SELECT", "DISTINCT", "AND", "OR", "NOT", "BY"}
)
# Keywords introducing a full expression slot; a group filling the slot is removable.
_EXPRESSION_SLOT = frozenset({"WHERE", "ON", "HAVING", "WHEN", "THEN", "ELSE", "SELECT", "DISTINCT"})
_SLOT_END = frozenset(
    """
    FROM WHERE GROUP ORDER LIMIT HAVING THEN ELSE END UNION INTERSECT EXCEPT
    WINDOW JOIN INNER LEFT RIGHT FULL CROSS NATURAL OFFSET
    """.split()
)


def _is_atom(lexemes: Sequence[Lexeme], sig: list[int], lo: int, hi: int,
             pairs: dict[int, int]) -> bool:
    """True when sig[lo:hi] is a single operand: a (dotted) name, literal, or call."""
    if hi - lo == 1:
        lx = lexemes[sig[lo]]
        return lx.kind in NAME_KINDS or lx.kind in LITERAL_KINDS
    first = lexemes[sig[lo]]
    if first.kind in NAME_KINDS and lexemes[sig[lo + 1]].text == "(":
        return pairs.get(lo + 1) == hi - 1
    pos = lo
    expect_name = True
    while pos < hi:
        lx = lexemes[sig[pos]]
        if expect_name:
            if lx.kind not in NAME_KINDS and not (pos > lo and lx.kind is LexemeKind.STRING_LITERAL):
                return False
        elif lx.text != ".":
            return False
        expect_name = not expect_name
        pos += 1
    return not expect_name


def _coalesce(seq: Iterable[tuple[LexemeKind, str]]) -> list[tuple[LexemeKind, str]]:
    out: list[tuple[LexemeKind, str]] = []
    for kind, text in seq:
        if out and kind is LexemeKind.WHITESPACE and out[-1][0] is LexemeKind.WHITESPACE:
            out[-1] = (kind, out[-1][1] + text)
        else:
            out.append((kind, text))
    return out


def removal_preserves_lexing(lexemes: Sequence[Lexeme], open_i: int, close_i: int) -> bool:
    """Does deleting lexemes ``open_i`` and ``close_i`` re-lex to the same sequence?

    Whitespace lexemes made adjacent by the deletion are compared as one run.
    """
    kept = [lx for k, lx in enumerate(lexemes) if k not in (open_i, close_i)]
    expected = _coalesce((lx.kind, lx.text) for lx in kept)
    relexed = [(lx.kind, lx.text) for lx in lex_sql("".join(lx.text for lx in kept))]
    return relexed == expected


def redundant_parens(lexemes: Sequence[Lexeme]) -> frozenset[int]:
    """Indices of parenthesis lexemes whose removal cannot change the query.

    Only groups not following a function name or syntax keyword and not
    enclosing a comma, set operator, or subquery are considered.  A group is
    redundant when it wraps a single operand, directly wraps another group,
    or fills a whole expression slot (e.g. the entire WHERE predicate).
    """
    sig = significant(lexemes)
    pairs = _matching_parens(lexemes, sig)
    found: set[int] = set()
    for o, c in pairs.items():
        if c - o < 2:
            continue
        prev = lexemes[sig[o - 1]] if o > 0 else None
        nxt = lexemes[sig[c + 1]] if c + 1 < len(sig) else None
        if prev is not None:
            if prev.kind is LexemeKind.KEYWORD:
                if prev.upper not in _GROUPING_AFTER:
                    continue
            elif prev.kind is not LexemeKind.OPERATOR and prev.text != "(":
                continue
        depth = 0
        blocked = False
        for pos in range(o + 1, c):
            lx = lexemes[sig[pos]]
            if lx.text == "(":
                depth += 1
            elif lx.text == ")":
                depth -= 1
            elif depth == 0 and (
                lx.text == "," or lx.upper in SET_OPERATORS
                or lx.upper in ("SELECT", "WITH", "VALUES")
            ):
                blocked = True
                break
        if blocked:
            continue
        doubled = pairs.get(o + 1) == c - 1
        atom = _is_atom(lexemes, sig, o + 1, c, pairs)
        whole_slot = (
            prev is not None
            and prev.kind is LexemeKind.KEYWORD
            and prev.upper in _EXPRESSION_SLOT
            and (nxt is None or nxt.text in (";", ")") or nxt.upper in _SLOT_END
                 or (nxt.text == "," and prev.upper in ("SELECT", "DISTINCT")))
        )
        if not (doubled or atom or whole_slot):
            continue
        if removal_preserves_lexing(lexemes, sig[o], sig[c]):
            found.update((sig[o], sig[c]))
    return frozenset(found)


def is_function_name(lexemes: Sequence[Lexeme], index: int) -> bool:
    """True when the lexeme at ``index`` is directly followed by '('."""
    for lx in lexemes[index + 1:]:
        if lx.kind in TRIVIA:
            continue
        return lx.text == "("
    return False


def classify_roles(lexemes: Sequence[Lexeme], links: SchemaLinks) -> list[Role]:
    """Assign each lexeme the role SQL-aware scoring uses to filter it."""
    from sqlconf.schema_link import canonical_literal, normalize_name

    names = links.tables | links.columns
    values = set(links.values)
    redundant = redundant_parens(lexemes)
    roles: list[Role] = []
    for i, lx in enumerate(lexemes):
        kind = lx.kind
        if kind in TRIVIA or i in redundant or lx.text in (",", ";"):
            role = Role.EXCLUDABLE
        elif kind is LexemeKind.KEYWORD:
            if lx.upper in OPTIONAL_KEYWORDS:
                role = Role.EXCLUDABLE
            elif lx.upper in CRITICAL_KEYWORDS:
                role = Role.CRITICAL_KEYWORD
            else:
                role = Role.OTHER
        elif kind in NAME_KINDS:
            if (kind is LexemeKind.IDENTIFIER and lx.upper in AGGREGATE_FUNCTIONS
                    and is_function_name(lexemes, i)):
                role = Role.CRITICAL_KEYWORD
            elif normalize_name(lx.text) in names:
                role = Role.SCHEMA_LINKED
            else:
                role = Role.OTHER
        elif kind in LITERAL_KINDS:
            if kind is LexemeKind.STRING_LITERAL and normalize_name(lx.text) in links.columns \
                    and _after_dot(lexemes, i):
                role = Role.SCHEMA_LINKED
            elif canonical_literal(lx) in values:
                role = Role.LITERAL
            else:
                role = Role.OTHER
        elif kind is LexemeKind.OPERATOR and lx.text in COMPARISON_OPERATORS:
            role = Role.COMPARISON_OPERATOR
        else:
            role = Role.OTHER
        roles.append(role)
    return roles


def _after_dot(lexemes: Sequence[Lexeme], index: int) -> bool:
    for lx in reversed(lexemes[:index]):
        if lx.kind in TRIVIA:
            continue
        return lx.text == "."
    return False
