"""Schema-link extraction: the tables, columns and constants a query touches."""

from __future__ import annotations

from dataclasses import dataclass
from decimal import Decimal, InvalidOperation
from typing import Sequence

from sqlconf.lexer import (
    LITERAL_KINDS,
    NAME_KINDS,
    Lexeme,
    LexemeKind,
    is_function_name,
    lex_sql,
    significant,
)


@dataclass(frozen=True)
class SchemaLinks:
    """Tables and columns are lowercase sets; ``values`` is a sorted multiset."""

    tables: frozenset[str] = frozenset()
    columns: frozenset[str] = frozenset()
    values: tuple[str, ...] = ()

    @property
    def heaviness(self) -> int:
        return len(self.tables) + len(self.columns) + len(self.values)


def normalize_name(text: str) -> str:
    """Strip identifier quoting and lowercase."""
    if len(text) >= 2 and text[0] in "\"`'" and text[-1] == text[0]:
        q = text[0]
        text = text[1:-1].replace(q + q, q)
    elif len(text) >= 2 and text[0] == "[" and text[-1] == "]":
        text = text[1:-1]
    return text.lower()


def canonical_number(text: str) -> str:
    """Canonical decimal text: 60, 60.0 and 6e1 all become '60'."""
    try:
        if text[:2].lower() == "0x":
            return str(int(text, 16))
        d = Decimal(text)
    except (InvalidOperation, ValueError):
        return text
    if d == d.to_integral_value():
        return str(int(d))
    return format(d.normalize(), "f")


def canonical_literal(lexeme: Lexeme) -> str:
    if lexeme.kind is LexemeKind.NUMERIC_LITERAL:
        return canonical_number(lexeme.text)
    text = lexeme.text
    body = text[1:-1] if len(text) >= 2 and text.endswith("'") else text[1:]
    return body.replace("''", "'")


# Keywords that open a clause; they reset the context for the current depth.
_CLAUSE_KEYWORDS = frozenset(
    """
    SELECT FROM WHERE GROUP HAVING ORDER LIMIT OFFSET ON USING JOIN UNION
    INTERSECT EXCEPT WINDOW VALUES SET
    """.split()
)
# Keywords that may sit between a table name and its positional alias / next item.
_TABLE_REF_END = frozenset(
    """
    WHERE GROUP HAVING ORDER LIMIT ON USING JOIN INNER LEFT RIGHT FULL CROSS
    NATURAL OUTER UNION INTERSECT EXCEPT WINDOW INDEXED NOT
    """.split()
)
# Lexemes after which a bare name in a SELECT list is a positional alias.
_OPERAND_END_KINDS = NAME_KINDS | LITERAL_KINDS


class _Walker:
    """Two-pass walk: collect aliases and table refs, then columns."""

    def __init__(self, lexemes: Sequence[Lexeme]):
        self.lx = lexemes
        self.sig = significant(lexemes)
        self.tables: set[str] = set()
        self.table_aliases: set[str] = set()
        self.column_aliases: set[str] = set()
        # positions in sig that are table names, aliases or qualifiers
        self.non_columns: set[int] = set()
        self.clause_at: list[str] = [""] * len(self.sig)

    def at(self, pos: int) -> Lexeme | None:
        return self.lx[self.sig[pos]] if 0 <= pos < len(self.sig) else None

    def collect_aliases(self) -> None:
        clause: list[str] = [""]
        pos = 0
        n = len(self.sig)
        while pos < n:
            lx = self.at(pos)
            up = lx.upper
            self.clause_at[pos] = clause[-1]
            if lx.text == "(":
                clause.append(clause[-1])
                pos += 1
                continue
            if lx.text == ")":
                if len(clause) > 1:
                    clause.pop()
                pos = self._after_derived_table(pos, clause)
                continue
            if lx.kind is LexemeKind.KEYWORD and up in _CLAUSE_KEYWORDS:
                clause[-1] = up
                if up in ("FROM", "JOIN"):
                    pos = self._table_ref(pos + 1)
                    continue
            elif clause[-1] == "FROM" and lx.text == ",":
                pos = self._table_ref(pos + 1)
                continue
            elif clause[-1] == "SELECT" and lx.kind in NAME_KINDS:
                prev = self.at(pos - 1)
                if prev is not None and prev.upper == "AS":
                    self.column_aliases.add(normalize_name(lx.text))
                    self.non_columns.add(pos)
                elif prev is not None and (prev.kind in _OPERAND_END_KINDS or prev.text in (")", "*")):
                    nxt = self.at(pos + 1)
                    if nxt is None or nxt.text in (",", ")", ";") or nxt.upper == "FROM":
                        self.column_aliases.add(normalize_name(lx.text))
                        self.non_columns.add(pos)
            pos += 1

    def _table_ref(self, pos: int) -> int:
        """Consume ``name [[AS] alias]`` starting at ``pos``; return next position."""
        lx = self.at(pos)
        if lx is None or lx.kind not in NAME_KINDS:
            return pos
        # schema-qualified table: take the last component
        while _is_dot(self.at(pos + 1)) and self.at(pos + 2) is not None \
                and self.at(pos + 2).kind in NAME_KINDS:
            self.non_columns.add(pos)
            pos += 2
            lx = self.at(pos)
        if is_function_name(self.lx, self.sig[pos]):
            # table-valued function; its arguments are handled by the main walk
            self.non_columns.add(pos)
            return pos + 1
        self.tables.add(normalize_name(lx.text))
        self.non_columns.add(pos)
        return self._alias(pos + 1, table=True)

    def _alias(self, pos: int, table: bool) -> int:
        nxt = self.at(pos)
        if nxt is not None and nxt.upper == "AS":
            pos += 1
            nxt = self.at(pos)
        if nxt is not None and nxt.kind in NAME_KINDS and nxt.upper not in _TABLE_REF_END:
            (self.table_aliases if table else self.column_aliases).add(normalize_name(nxt.text))
            self.non_columns.add(pos)
            return pos + 1
        return pos

    def _after_derived_table(self, pos: int, clause: list[str]) -> int:
        """After ')' closing a FROM subquery, record the derived-table alias."""
        if clause[-1] in ("FROM", "JOIN"):
            return self._alias(pos + 1, table=True)
        return pos + 1

    def extract(self) -> SchemaLinks:
        self.collect_aliases()
        columns: set[str] = set()
        values: list[str] = []
        for pos, i in enumerate(self.sig):
            lx = self.lx[i]
            if lx.kind in LITERAL_KINDS:
                if lx.kind is LexemeKind.STRING_LITERAL and _is_dot(self.at(pos - 1)):
                    columns.add(normalize_name(lx.text))
                else:
                    values.append(canonical_literal(lx))
                continue
            if lx.kind not in NAME_KINDS or pos in self.non_columns:
                continue
            if _is_dot(self.at(pos + 1)):
                continue  # qualifier of t.c
            if is_function_name(self.lx, i):
                continue
            name = normalize_name(lx.text)
            if not _is_dot(self.at(pos - 1)):
                if name in self.table_aliases:
                    continue
                if name in self.column_aliases and self.clause_at[pos] in ("ORDER", "GROUP", "HAVING"):
                    continue
            columns.add(name)
        return SchemaLinks(
            tables=frozenset(self.tables),
            columns=frozenset(columns),
            values=tuple(sorted(values)),
        )


def _is_dot(lx: Lexeme | None) -> bool:
    return lx is not None and lx.text == "."


def extract(sql: str) -> SchemaLinks:
    """Schema links referenced by ``sql``; best effort, never raises."""
    return extract_from_lexemes(lex_sql(sql))


def extract_from_lexemes(lexemes: Sequence[Lexeme]) -> SchemaLinks:
    return _Walker(lexemes).extract()


def links_equal(a: SchemaLinks, b: SchemaLinks) -> bool:
    return a.tables == b.tables and a.columns == b.columns and a.values == b.values
