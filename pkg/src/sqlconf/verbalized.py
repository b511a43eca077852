"""Verbalized-confidence prompts and response parsing."""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from typing import Any, Iterable, Mapping, Sequence

MAX_RESULT_ROWS = 1000
SAMPLE_ROWS = 3
PARSE_FALLBACK = 0.5

SCHEMA_PLACEHOLDER = "{{TABLE_SCHEMA}}"


class VerbalMethod(enum.Enum):
    VANILLA = "Vanilla"
    COT = "CoT"
    AUG_COT = "AugCoT"
    SELF_CHECK = "SelfCheck"

    @classmethod
    def parse(cls, text: str) -> VerbalMethod:
        key = text.strip().lower().replace("-", "").replace("_", "")
        for m in cls:
            if m.value.lower() == key:
                return m
        raise ValueError(f"unknown verbalized method {text!r}")


_TEMPLATE_FILES = {
    VerbalMethod.VANILLA: "vanilla.txt",
    VerbalMethod.COT: "cot.txt",
    VerbalMethod.AUG_COT: "augcot.txt",
    VerbalMethod.SELF_CHECK: "selfcheck.txt",
    None: "whitebox.txt",
}
_NEEDS_SQL = {VerbalMethod.AUG_COT, VerbalMethod.SELF_CHECK}


class MissingExecutionResult(ValueError):
    pass


class ParseFailure(ValueError):
    pass


@dataclass(frozen=True)
class PromptBundle:
    """A rendered prompt; ``method`` is None for the white-box generation prompt."""

    method: VerbalMethod | None
    system_text: str
    user_text: str

    def messages(self) -> list[tuple[str, str]]:
        return [("system", self.system_text), ("user", self.user_text)]


@lru_cache(maxsize=None)
def load_template(method: VerbalMethod | None) -> str:
    return resources.files("sqlconf.templates").joinpath(_TEMPLATE_FILES[method]).read_text("utf-8")


def _cell(value: Any) -> str:
    return "NULL" if value is None else str(value)


def format_rows(rows: Iterable[Sequence[Any]]) -> str:
    return "\n".join(" | ".join(_cell(c) for c in row) for row in rows)


def serialize_schema(columns: Mapping[str, Sequence[str]],
                     sample_rows: Mapping[str, Sequence[Sequence[Any]]] | None = None) -> str:
    """``Table <name>, columns = [*, a, b]`` per table, then up to three pipe-delimited rows."""
    blocks = []
    for table, cols in columns.items():
        lines = [f"Table {table}, columns = [{', '.join(['*', *cols])}]"]
        rows = (sample_rows or {}).get(table, ())
        if rows:
            lines.append(format_rows(list(rows)[:SAMPLE_ROWS]))
        blocks.append("\n".join(lines))
    return "\n".join(blocks)


def distinct_rows(rows: Iterable[Sequence[Any]], limit: int = MAX_RESULT_ROWS) -> list[tuple]:
    """The first ``limit`` distinct rows, in order of first appearance."""
    seen: dict[tuple, None] = {}
    for row in rows:
        seen.setdefault(tuple(row), None)
        if len(seen) >= limit:
            break
    return list(seen)


def build_prompt(method: VerbalMethod | None, question: str,
                 schema_text: str | Mapping[str, Sequence[str]],
                 sample_rows: Mapping[str, Sequence[Sequence[Any]]] | None = None,
                 execution_result: Iterable[Sequence[Any]] | None = None,
                 *, sql_query: str | None = None, evidence: str | None = None) -> PromptBundle:
    """Render the template for ``method``.

    ``schema_text`` is either an already-serialized schema or a mapping of
    table name to column names, serialized together with ``sample_rows``.
    AugCoT and SelfCheck grade a given query, so they also need ``sql_query``.
    """
    if method is VerbalMethod.AUG_COT and execution_result is None:
        raise MissingExecutionResult("AugCoT needs the execution result of the query")
    if method is not VerbalMethod.AUG_COT and execution_result is not None:
        raise ValueError(f"{method} does not take an execution result")
    if method in _NEEDS_SQL and sql_query is None:
        raise ValueError(f"{method.value} needs sql_query")
    if not isinstance(schema_text, str):
        schema_text = serialize_schema(schema_text, sample_rows)

    if evidence:
        question = f"{question}\nEvidence: {evidence}"
    template = load_template(method)
    cut = template.index(SCHEMA_PLACEHOLDER)
    system_text = template[:cut].rstrip("\n")
    user = template[cut:]
    fills = {
        "{{TABLE_SCHEMA}}": schema_text,
        "{{QUESTION}}": question,
        "{{SQL_QUERY}}": sql_query or "",
        "{{EXECUTION_RESULT}}": format_rows(distinct_rows(execution_result or ())),
    }
    # single pass so placeholder-like text inside substituted values stays literal
    pattern = re.compile("|".join(re.escape(k) for k in fills))
    user_text = pattern.sub(lambda m: fills[m.group(0)], user).rstrip("\n")
    return PromptBundle(method, system_text, user_text)


_CONFIDENCE = re.compile(r"Confidence\s*:\s*\**\s*([-+]?\d+(?:\.\d+)?)\s*(%?)", re.IGNORECASE)


def parse_confidence(response: str) -> float:
    """Last ``Confidence: <number>`` in the response, divided by 100."""
    matches = list(_CONFIDENCE.finditer(response))
    if not matches:
        raise ParseFailure("no 'Confidence:' score found")
    raw = float(matches[-1].group(1))
    if not 0.0 <= raw <= 100.0:
        raise ParseFailure(f"confidence {raw} outside [0, 100]")
    return raw / 100.0


_SELF_CHECK = re.compile(r"(?<![\w(])(\(T\)|\(F\)|T|F)(?![\w)])")


def parse_self_check(response: str) -> float:
    """First standalone T/(T) or F/(F): 1.0 for true, 0.0 for false."""
    m = _SELF_CHECK.search(response)
    if m is None:
        raise ParseFailure("no (T)/(F) verdict found")
    return 1.0 if "T" in m.group(1) else 0.0


def parse_or_fallback(method: VerbalMethod, response: str,
                      fallback: float = PARSE_FALLBACK) -> tuple[float, bool]:
    """(score, parse_failed) with ``fallback`` substituted on ParseFailure."""
    parser = parse_self_check if method is VerbalMethod.SELF_CHECK else parse_confidence
    try:
        return parser(response), False
    except ParseFailure:
        return fallback, True
