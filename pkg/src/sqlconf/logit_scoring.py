"""Logit-based query confidence: full-token, schema-linked and SQL-aware scores.

Probabilities are linear at this layer.  SQL-aware scoring folds the
candidate mass of SQL-equivalent alternatives (case variants, synonyms,
reordered list items and operands) onto the chosen token before
aggregating.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from sqlconf.lexer import (
    LITERAL_KINDS,
    NAME_KINDS,
    Lexeme,
    LexemeKind,
    Role,
    TokenRecord,
    align,
    classify_roles,
    lex_sql,
    lexeme_probability,
    significant,
)
from sqlconf.schema_link import extract_from_lexemes


class EmptySelection(ValueError):
    """No lexeme survived the method's filter and strict mode is on."""


class DegenerateScoreWarning(UserWarning):
    pass


class Method(enum.Enum):
    FTC = "FTC"
    SLC = "SLC"
    SAC = "SAC"


class Aggregation(enum.Enum):
    PRODUCT = "Product"
    AVERAGE = "Average"

    @classmethod
    def parse(cls, text: str) -> Aggregation:
        key = text.strip().lower()
        if key in ("prod", "product", "mul"):
            return cls.PRODUCT
        if key in ("avg", "average", "mean"):
            return cls.AVERAGE
        raise ValueError(f"unknown aggregation {text!r}")


DEFAULT_SYNONYMS: tuple[frozenset[str], ...] = (
    frozenset({"!=", "<>"}),
    frozenset({"=", "=="}),
)

SLC_ROLES = frozenset({Role.SCHEMA_LINKED, Role.LITERAL})
SAC_ROLES = frozenset(
    {Role.SCHEMA_LINKED, Role.LITERAL, Role.CRITICAL_KEYWORD, Role.COMPARISON_OPERATOR}
)
DEGENERATE_SCORE = 0.5


@dataclass(frozen=True)
class FoldingConfig:
    """SQL-aware scoring switches; each flag is one ablation row.

    ``sac_roles`` widens the SQL-aware filter to every lexeme when set to
    ``"all"``.  ``strict_empty`` turns the degenerate empty-selection score
    into an :class:`EmptySelection` error.
    """

    token_exclusion: bool = True
    case_folding: bool = True
    order_folding: bool = True
    synonym_folding: bool = True
    equivalent_expressions: bool = True
    top_k: int = 5
    sac_roles: str = "critical"
    strict_empty: bool = False
    synonyms: tuple[frozenset[str], ...] = field(default=DEFAULT_SYNONYMS)

    FLAGS = (
        "token_exclusion",
        "case_folding",
        "order_folding",
        "synonym_folding",
        "equivalent_expressions",
    )

    def __post_init__(self) -> None:
        if self.top_k < 1:
            raise ValueError("top_k must be >= 1")
        if self.sac_roles not in ("critical", "all"):
            raise ValueError(f"sac_roles must be 'critical' or 'all', got {self.sac_roles!r}")

    @classmethod
    def all_off(cls, **overrides) -> FoldingConfig:
        flags = {name: False for name in cls.FLAGS}
        flags.update(overrides)
        return cls(**flags)


@dataclass(frozen=True)
class MethodScore:
    method: Method
    aggregation: Aggregation
    value: float
    lexeme_count: int
    degenerate: bool = False

    @property
    def name(self) -> str:
        return f"{self.method.value}-{self.aggregation.value}"


def _top_candidates(token: TokenRecord, top_k: int | None) -> Sequence[tuple[str, float]]:
    if top_k is None or len(token.candidates) <= top_k:
        return token.candidates
    ranked = sorted(token.candidates, key=lambda c: -c[1])[:top_k]
    if not any(t == token.text for t, _ in ranked):
        ranked[-1] = (token.text, token.prob)
    return ranked


def fold_probability(
    chosen: TokenRecord, equivalents: Iterable[str], top_k: int | None = None
) -> float:
    """Chosen probability plus the mass of candidates equivalent to it.

    A candidate matches when its trimmed text equals a member of
    ``equivalents`` case-insensitively.  The chosen token itself is never
    counted twice.  The result is capped at 1.
    """
    wanted = {e.strip().lower() for e in equivalents}
    total = chosen.prob
    if wanted:
        for text, p in _top_candidates(chosen, top_k):
            if text == chosen.text:
                continue
            if text.strip().lower() in wanted:
                total += p
    return min(total, 1.0)


# -- order and operand folding ------------------------------------------------

_LIST_CLAUSES = frozenset({"SELECT", "GROUP"})
_PREDICATE_CLAUSES = frozenset({"WHERE", "ON", "HAVING", "PRED"})
_CLAUSE_STARTERS = frozenset(
    """
    SELECT FROM WHERE GROUP HAVING ORDER LIMIT OFFSET ON JOIN INNER LEFT RIGHT
    FULL CROSS NATURAL UNION INTERSECT EXCEPT WINDOW VALUES USING
    """.split()
)
_GROUPING_KEYWORDS = frozenset({"WHERE", "ON", "HAVING", "AND", "OR", "NOT", "WHEN", "THEN", "ELSE"})
_SYMMETRIC_OPERATORS =frozenset({"=", "==", "!=", "<>"})
_ARITHMETIC = frozenset({"+", "-", "*", "/", "%", "||", "&", "|", "<<", ">>"})
_OPERAND_KINDS = NAME_KINDS | LITERAL_KINDS


def _token_offsets(tokens: Sequence[TokenRecord]) -> list[tuple[int, int]]:
    out = []
    pos = 0
    for tok in tokens:
        out.append((pos, pos + len(tok.text)))
        pos += len(tok.text)
    return out


class _OrderAnalysis:
    """Find list items and commutative operands and their first tokens."""

    def __init__(self, lexemes: Sequence[Lexeme], tokens: Sequence[TokenRecord],
                 lists: bool, operands: bool):
        self.lx = lexemes
        self.tokens = tokens
        self.sig = significant(lexemes)
        self.offsets = _token_offsets(tokens)
        self.lists = lists
        self.operands = operands
        self.siblings: dict[int, set[str]] = {}

    def surface(self, pos: int) -> tuple[int, str] | None:
        """(first token index, text of that token inside the lexeme) for sig pos."""
        lx = self.lx[self.sig[pos]]
        if not lx.token_indices:
            return None
        ti = lx.token_indices[0]
        start, end = self.offsets[ti]
        lo, hi = max(start, lx.span[0]), min(end, lx.span[1])
        text = self.tokens[ti].text[lo - start:hi - start]
        return ti, text.strip()

    def record(self, groups: list[list[int]]) -> None:
        heads = [self.surface(g[0]) for g in groups if g]
        for k, head in enumerate(heads):
            if head is None:
                continue
            later = {h[1] for h in heads[k + 1:] if h is not None and h[1]}
            if later:
                self.siblings.setdefault(head[0], set()).update(later)

    def run(self) -> dict[int, set[str]]:
        self._group(0, "")
        if self.operands:
            self._symmetric()
        return self.siblings

    def _group(self, pos: int, clause: str) -> int:
        items: list[list[int]] = [[]]
        conj: list[list[int]] = [[]]
        connectives: list[str] = []
        between = False

        def flush() -> None:
            if self.lists and clause in _LIST_CLAUSES and len(items) > 1:
                self.record(items)
            if (self.operands and clause in _PREDICATE_CLAUSES and len(conj) > 1
                    and len(set(connectives)) == 1):
                self.record(conj)

        while pos < len(self.sig):
            lx = self.lx[self.sig[pos]]
            up = lx.upper
            if lx.text == "(":
                prev = self.lx[self.sig[pos - 1]] if pos > 0 else None
                call = prev is not None and (
                    prev.kind in NAME_KINDS
                    or (prev.kind is LexemeKind.KEYWORD and prev.upper not in _GROUPING_KEYWORDS)
                )
                inner = "PRED" if clause in _PREDICATE_CLAUSES and not call else ""
                items[-1].append(pos)
                conj[-1].append(pos)
                pos = self._group(pos + 1, inner)
                continue
            if lx.text == ")":
                flush()
                return pos + 1
            if lx.kind is LexemeKind.KEYWORD and up in _CLAUSE_STARTERS:
                flush()
                clause = up
                items, conj, connectives, between = [[]], [[]], [], False
                pos += 1
                continue
            if clause in _LIST_CLAUSES:
                if not items[-1] and len(items) == 1 and up in ("BY", "DISTINCT", "ALL"):
                    pos += 1
                    continue
                if lx.text == ",":
                    items.append([])
                    pos += 1
                    continue
            if clause in _PREDICATE_CLAUSES:
                if up == "BETWEEN":
                    between = True
                elif up in ("AND", "OR") and lx.kind is LexemeKind.KEYWORD:
                    if up == "AND" and between:
                        between = False
                    else:
                        connectives.append(up)
                        conj.append([])
                        pos += 1
                        continue
            items[-1].append(pos)
            conj[-1].append(pos)
            pos += 1
        flush()
        return pos

    def _is_operand(self, pos: int) -> bool:
        lx = self.lx[self.sig[pos]]
        return lx.kind in _OPERAND_KINDS or lx.text == "."

    def _symmetric(self) -> None:
        n = len(self.sig)
        for pos in range(n):
            lx = self.lx[self.sig[pos]]
            if lx.kind is not LexemeKind.OPERATOR or lx.text not in _SYMMETRIC_OPERATORS:
                continue
            left = pos
            while left > 0 and self._is_operand(left - 1):
                left -= 1
            right = pos
            while right + 1 < n and self._is_operand(right + 1):
                right += 1
            if left == pos or right == pos:
                continue
            before = self.lx[self.sig[left - 1]] if left > 0 else None
            after = self.lx[self.sig[right + 1]] if right + 1 < n else None
            if (before is not None and before.text in _ARITHMETIC) or (
                    after is not None and after.text in _ARITHMETIC):
                continue
            self.record([[left], [pos + 1]])


def order_equivalents(
    lexemes: Sequence[Lexeme],
    tokens: Sequence[TokenRecord],
    *,
    lists: bool = True,
    operands: bool = True,
) -> dict[int, set[str]]:
    """Token index -> first-token texts of siblings that could come first instead.

    ``lists`` covers comma lists in SELECT and GROUP BY; ``operands`` covers
    symmetric comparisons and homogeneous AND / OR chains.
    """
    if not (lists or operands):
        return {}
    return _OrderAnalysis(lexemes, tokens, lists, operands).run()


def fold_order(
    lexemes: Sequence[Lexeme],
    tokens: Sequence[TokenRecord],
    config: FoldingConfig | None = None,
) -> list[float]:
    """Per-lexeme probabilities with only order/operand folding applied."""
    config = config or FoldingConfig()
    eq = order_equivalents(
        lexemes, tokens, lists=config.order_folding, operands=config.equivalent_expressions
    )
    return [
        math.prod(
            fold_probability(tokens[t], eq.get(t, ()), config.top_k) for t in lx.token_indices
        )
        for lx in lexemes
    ]


# -- scoring ------------------------------------------------------------------

def _synonyms_of(text: str, table: Sequence[frozenset[str]]) -> set[str]:
    out: set[str] = set()
    key = text.strip().upper()
    for group in table:
        if key in {g.upper() for g in group}:
            out.update(group)
    return out


def _sac_probability(
    lexeme: Lexeme,
    tokens: Sequence[TokenRecord],
    order_eq: dict[int, set[str]],
    config: FoldingConfig,
) -> float:
    prob = 1.0
    for t in lexeme.token_indices:
        tok = tokens[t]
        eq: set[str] = set(order_eq.get(t, ()))
        stripped = tok.text.strip()
        if config.case_folding and stripped and lexeme.kind in (
                LexemeKind.KEYWORD, LexemeKind.IDENTIFIER, LexemeKind.QUOTED_IDENTIFIER):
            eq.add(stripped)
        if config.synonym_folding and stripped.upper() == lexeme.upper and lexeme.kind in (
                LexemeKind.OPERATOR, LexemeKind.KEYWORD):
            eq |= _synonyms_of(lexeme.text, config.synonyms)
        prob *= fold_probability(tok, eq, config.top_k)
    return prob


def select_lexemes(
    method: Method, lexemes: Sequence[Lexeme], roles: Sequence[Role], config: FoldingConfig
) -> list[int]:
    """Indices of the lexemes ``method`` aggregates over."""
    chosen = []
    for i, (lx, role) in enumerate(zip(lexemes, roles)):
        if not lx.token_indices:
            continue
        if method is Method.FTC:
            keep = True
        elif method is Method.SLC:
            keep = role in SLC_ROLES
        elif role is Role.EXCLUDABLE:
            keep = not config.token_exclusion
        else:
            keep = config.sac_roles == "all" or role in SAC_ROLES
        if keep:
            chosen.append(i)
    return chosen


def aggregate(probs: Sequence[float], aggregation: Aggregation) -> float:
    lo, hi = min(probs), max(probs)
    # rounding in exp/log or the division can step one ulp past a bound that holds exactly
    if aggregation is Aggregation.PRODUCT:
        value = min(math.exp(math.fsum(math.log(p) for p in probs)), lo)
    else:
        value = min(max(math.fsum(probs) / len(probs), lo), hi)
    return min(max(value, 0.0), 1.0)


def score(
    method: Method,
    aggregation: Aggregation,
    lexemes: Sequence[Lexeme],
    roles: Sequence[Role],
    tokens: Sequence[TokenRecord],
    config: FoldingConfig | None = None,
    *,
    warn: bool = True,
) -> MethodScore:
    """Aggregate the selected lexeme probabilities into one confidence value.

    ``lexemes`` must already be aligned with ``tokens``.  Only SQL-aware
    scoring applies folding; full-token and schema-linked scores use raw
    probabilities.
    """
    config = config or FoldingConfig()
    picked = select_lexemes(method, lexemes, roles, config)
    if not picked:
        if config.strict_empty:
            raise EmptySelection(f"{method.value}: no lexeme selected")
        if warn:
            warnings.warn(
                f"{method.value}: empty selection, using {DEGENERATE_SCORE}",
                DegenerateScoreWarning, stacklevel=2,
            )
        return MethodScore(method, aggregation, DEGENERATE_SCORE, 0, degenerate=True)
    if method is Method.SAC:
        order_eq = order_equivalents(
            lexemes, tokens,
            lists=config.order_folding, operands=config.equivalent_expressions,
        )
        probs = [_sac_probability(lexemes[i], tokens, order_eq, config) for i in picked]
    else:
        probs = [lexeme_probability(lexemes[i], tokens) for i in picked]
    return MethodScore(method, aggregation, aggregate(probs, aggregation), len(picked))


@dataclass
class AnalyzedQuery:
    """A generated query lexed, aligned and classified once for many scorers."""

    sql: str
    tokens: list[TokenRecord]
    lexemes: list[Lexeme]
    roles: list[Role]

    @classmethod
    def build(cls, sql: str, tokens: Sequence[TokenRecord]) -> AnalyzedQuery:
        lexemes = align(tokens, lex_sql(sql))
        roles = classify_roles(lexemes, extract_from_lexemes(lexemes))
        return cls(sql, list(tokens), lexemes, roles)

    def score(self, method: Method, aggregation: Aggregation,
              config: FoldingConfig | None = None, *, warn: bool = True) -> MethodScore:
        return score(method, aggregation, self.lexemes, self.roles, self.tokens, config, warn=warn)
