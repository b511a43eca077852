"""Dataset loading, SQL extraction, and the end-to-end evaluation run."""

from __future__ import annotations

import configparser
import csv
import io
import json
import logging
import os
import random
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Sequence

from sqlconf import consistency, sql_exec, verbalized
from sqlconf.lexer import TokenRecord
from sqlconf.llm_gateway import (
    DEFAULT_MAX_TOKENS, DEFAULT_TOP_K, CacheMiss, Gateway, GenerationRequest, Mode,
    OpenAICompatibleProvider, ProviderError, ResponseCache,
)
from sqlconf.logit_scoring import (
    Aggregation, AnalyzedQuery, FoldingConfig, Method,
)
from sqlconf.metrics import (
    STRATA_AXES, CalibrationReport, LabeledScore, calibration_report, report_rows,
    report_to_json, reports_to_csv, stratify,
)

log = logging.getLogger(__name__)

DATASET_FORMATS = ("spider", "bird")
CONSISTENCY_PREFIX = "Consistency-"


class ConfigError(ValueError):
    pass


class FormatError(ValueError):
    def __init__(self, message: str, index: int | None = None):
        super().__init__(message if index is None else f"record {index}: {message}")
        self.index = index


class NoSqlFound(ValueError):
    pass


@dataclass(frozen=True)
class EvalExample:
    id: str
    question: str
    gold_sql: str
    db_id: str
    difficulty: str | None = None
    evidence: str | None = None

    def __post_init__(self) -> None:
        if not self.question.strip() or not self.gold_sql.strip():
            raise ValueError(f"{self.id}: question and gold SQL must be nonempty")


_FIELDS = {
    "spider": {"question": "question", "gold_sql": "query", "db_id": "db_id"},
    "bird": {"question": "question", "gold_sql": "SQL", "db_id": "db_id"},
}


def load_dataset(path: str | Path, fmt: str) -> list[EvalExample]:
    """Read a Spider or BIRD dev-style JSON array."""
    fmt = fmt.lower()
    if fmt not in DATASET_FORMATS:
        raise ConfigError(f"unknown dataset format {fmt!r}")
    try:
        records = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"invalid JSON: {exc}") from exc
    if not isinstance(records, list):
        raise FormatError("dataset must be a JSON array")
    out = []
    for i, rec in enumerate(records):
        if not isinstance(rec, dict):
            raise FormatError("record is not an object", i)
        values = {}
        for attr, key in _FIELDS[fmt].items():
            value = rec.get(key)
            if not isinstance(value, str) or not value.strip():
                raise FormatError(f"missing or empty field {key!r}", i)
            values[attr] = value
        ident = rec.get("id", rec.get("question_id"))
        extra = {}
        if fmt == "bird":
            extra = {"difficulty": rec.get("difficulty"), "evidence": rec.get("evidence") or None}
        elif rec.get("difficulty"):
            extra = {"difficulty": rec["difficulty"]}
        out.append(EvalExample(id=str(ident) if ident is not None else f"{fmt}-{i}",
                               **values, **extra))
    return out


# -- SQL extraction -------------------------------------------------------------

_SQL_MARKER = re.compile(r"SQL\s*Query\s*:", re.IGNORECASE)
_END_MARKER = re.compile(r"(?:Confidence|Scratchpad)\s*:", re.IGNORECASE)
_FENCE_OPEN = re.compile(r"\s*```[\w-]*[ \t]*\n?")
_FENCE_CLOSE = re.compile(r"\n?[ \t]*```[\s\S]*$")


def _trim(text: str, start: int, end: int) -> tuple[int, int]:
    while start < end and text[start].isspace():
        start += 1
    while end > start and text[end - 1].isspace():
        end -= 1
    return start, end


def _strip_fences(text: str, start: int, end: int) -> tuple[int, int]:
    start, end = _trim(text, start, end)
    m = _FENCE_OPEN.match(text, start, end)
    if m:
        start = m.end()
    m = _FENCE_CLOSE.search(text, start, end)
    if m:
        end = m.start()
    return _trim(text, start, end)


_QUERY_START = re.compile(
    r"\bSELECT\b|\bWITH\s+(?:RECURSIVE\s+)?[\w\"`\[\]]+\s*(?:\([^()]*\)\s*)?AS\s*(?:NOT\s+)?(?:MATERIALIZED\s+)?\(",
    re.IGNORECASE,
)


def extract_sql_span(response: str) -> tuple[int, int]:
    """Character span of the SQL query inside a model response."""
    m = _SQL_MARKER.search(response)
    if m is not None:
        start = m.end()
    else:
        # no marker: the longest candidate starts at the first SELECT/WITH keyword
        q = _QUERY_START.search(response)
        if q is None:
            raise NoSqlFound("no SQL query in response")
        start = q.start()
    conf = _END_MARKER.search(response, start)
    end = conf.start() if conf else len(response)
    start, end = _strip_fences(response, start, end)
    if start >= end:
        raise NoSqlFound("empty SQL query in response")
    return start, end


def extract_sql(response: str) -> str:
    start, end = extract_sql_span(response)
    return response[start:end]


def clip_tokens(tokens: Sequence[TokenRecord], span: tuple[int, int]) -> list[TokenRecord]:
    """Tokens overlapping ``span``, with boundary tokens cut to the span.

    A cut token keeps its probability; its alternatives are kept as they are.
    """
    out = []
    pos = 0
    lo, hi = span
    for tok in tokens:
        start, end = pos, pos + len(tok.text)
        pos = end
        if end <= lo or start >= hi:
            continue
        piece = tok.text[max(lo - start, 0):min(hi, end) - start]
        if piece == tok.text:
            out.append(tok)
        else:
            others = tuple((t, p) for t, p in tok.candidates if t != tok.text and t != piece)
            out.append(TokenRecord(piece, tok.prob, others))
    return out


# -- configuration --------------------------------------------------------------

_LOGIT = {m.value: m for m in Method}
_CLUSTER = {c.value: c for c in consistency.ClusterMethod}


@dataclass(frozen=True)
class MethodSelector:
    name: str
    family: str  # "logit" | "consistency" | "verbalized"
    logit: Method | None = None
    aggregation: Aggregation | None = None
    cluster: consistency.ClusterMethod | None = None
    verbal: verbalized.VerbalMethod | None = None

    @property
    def method_column(self) -> str:
        if self.family == "logit":
            return self.logit.value
        return self.name

    @property
    def aggregation_column(self) -> str:
        return self.aggregation.value if self.aggregation else ""

    @classmethod
    def parse(cls, text: str) -> MethodSelector:
        text = text.strip()
        head, _, tail = text.partition("-")
        if head.upper() in _LOGIT and tail:
            method = _LOGIT[head.upper()]
            agg = Aggregation.parse(tail)
            return cls(f"{method.value}-{agg.value}", "logit", logit=method, aggregation=agg)
        if head.lower() == "consistency" and tail:
            for value, cm in _CLUSTER.items():
                if value.lower() == tail.lower():
                    return cls(f"{CONSISTENCY_PREFIX}{value}", "consistency", cluster=cm)
        try:
            vm = verbalized.VerbalMethod.parse(text)
        except ValueError:
            raise ConfigError(f"unknown method selector {text!r}") from None
        return cls(vm.value, "verbalized", verbal=vm)


def parse_methods(text: str) -> tuple[MethodSelector, ...]:
    out: list[MethodSelector] = []
    for item in text.split(","):
        if item.strip():
            sel = MethodSelector.parse(item)
            if sel not in out:
                out.append(sel)
    if not out:
        raise ConfigError("no methods configured")
    return tuple(out)


@dataclass(frozen=True)
class RunConfig:
    dataset: Path
    db_root: Path
    output_dir: Path
    cache: Path
    methods: tuple[MethodSelector, ...]
    dataset_format: str = "spider"
    folding: FoldingConfig = field(default_factory=FoldingConfig)
    n_samples: int = consistency.DEFAULT_SAMPLES
    temperature: float = consistency.DEFAULT_TEMPERATURE
    grounding: bool = True
    mode: Mode = Mode.REPLAY
    ece_bins: int = 10
    seed: int = 0
    model_id: str = "model"
    base_url: str | None = None
    top_k: int = DEFAULT_TOP_K
    max_tokens: int = DEFAULT_MAX_TOKENS
    workers: int = 0
    timeout: float = sql_exec.DEFAULT_TIMEOUT
    embedder: str = "hashing"
    embed_url: str | None = None
    embed_model: str | None = None
    embed_threshold: float = consistency.DEFAULT_EMBED_THRESHOLD
    embed_linkage: str = "centroid"
    parse_fallback: float = verbalized.PARSE_FALLBACK
    use_evidence: bool = True
    failure_threshold: float = 0.1

    def validate(self) -> None:
        if self.mode is Mode.REPLAY and not self.cache.is_file():
            raise ConfigError(f"Replay mode needs an existing cache file: {self.cache}")
        if not self.dataset.is_file():
            raise ConfigError(f"dataset not found: {self.dataset}")
        if not self.db_root.is_dir():
            raise ConfigError(f"db_root is not a directory: {self.db_root}")
        if self.n_samples < 0 or self.ece_bins < 1 or self.temperature < 0:
            raise ConfigError("n_samples >= 0, ece_bins >= 1 and temperature >= 0 are required")
        if self.embed_linkage not in ("centroid", "single"):
            raise ConfigError(f"unknown embed_linkage {self.embed_linkage!r}")
        if any(m.family == "consistency" for m in self.methods) and self.n_samples < 1:
            raise ConfigError("consistency methods need n_samples >= 1")

    def header(self) -> dict[str, Any]:
        """Settings recorded at the top of every report."""
        return {
            "seed": self.seed,
            "model_id": self.model_id,
            "ece_bins": self.ece_bins,
            "grounding": self.grounding,
            "n_samples": self.n_samples,
            "temperature": self.temperature,
            "folding": {name: getattr(self.folding, name) for name in FoldingConfig.FLAGS}
            | {"top_k": self.folding.top_k, "sac_roles": self.folding.sac_roles},
        }


_BOOL = {"1": True, "true": True, "yes": True, "on": True,
         "0": False, "false": False, "no": False, "off": False}


def _as_bool(key: str, value: str) -> bool:
    try:
        return _BOOL[value.strip().lower()]
    except KeyError:
        raise ConfigError(f"{key}: expected a boolean, got {value!r}") from None


def load_config(path: str | Path, **overrides: Any) -> RunConfig:
    """Parse a flat ``key = value`` file.

    Relative input paths resolve against the config file's folder; a relative
    ``output_dir`` resolves against the working directory.
    """
    path = Path(path)
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    try:
        parser.read_string("[run]\n" + path.read_text(encoding="utf-8"))
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    raw = dict(parser["run"])
    raw.update({k: str(v) for k, v in overrides.items() if v is not None})
    base = path.parent

    def take(key: str, default: Any = None) -> Any:
        return raw.pop(key, default)

    def as_path(key: str, required: bool = True, root: Path | None = None) -> Path | None:
        value = take(key)
        if value is None:
            if required:
                raise ConfigError(f"missing required key {key!r}")
            return None
        p = Path(value).expanduser()
        return p if p.is_absolute() else (root or base) / p

    try:
        folding_kw: dict[str, Any] = {}
        for name in FoldingConfig.FLAGS + ("strict_empty",):
            if name in raw:
                folding_kw[name] = _as_bool(name, take(name))
        if "top_k" in raw:
            folding_kw["top_k"] = int(raw["top_k"])
        if "sac_roles" in raw:
            folding_kw["sac_roles"] = take("sac_roles")
        output_dir = as_path("output_dir", root=Path.cwd())
        cfg = RunConfig(
            dataset=as_path("dataset"),
            db_root=as_path("db_root"),
            output_dir=output_dir,
            cache=as_path("cache", required=False) or output_dir / "cache.jsonl",
            methods=parse_methods(take("methods", "") or ""),
            dataset_format=take("dataset_format", "spider").lower(),
            folding=FoldingConfig(**folding_kw),
            n_samples=int(take("n_samples", consistency.DEFAULT_SAMPLES)),
            temperature=float(take("temperature", consistency.DEFAULT_TEMPERATURE)),
            grounding=_as_bool("grounding", take("grounding", "true")),
            mode=Mode.parse(take("mode", "replay")),
            ece_bins=int(take("ece_bins", 10)),
            seed=int(take("seed", 0)),
            model_id=take("model_id", "model"),
            base_url=take("base_url"),
            top_k=int(take("top_k", DEFAULT_TOP_K)),
            max_tokens=int(take("max_tokens", DEFAULT_MAX_TOKENS)),
            workers=int(take("workers", 0)),
            timeout=float(take("timeout", sql_exec.DEFAULT_TIMEOUT)),
            embedder=take("embedder", "hashing"),
            embed_url=take("embed_url"),
            embed_model=take("embed_model"),
            embed_threshold=float(take("embed_threshold", consistency.DEFAULT_EMBED_THRESHOLD)),
            embed_linkage=take("embed_linkage", "centroid"),
            parse_fallback=float(take("parse_fallback", verbalized.PARSE_FALLBACK)),
            use_evidence=_as_bool("use_evidence", take("use_evidence", "true")),
            failure_threshold=float(take("failure_threshold", 0.1)),
        )
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc
    if cfg.dataset_format not in DATASET_FORMATS:
        raise ConfigError(f"unknown dataset_format {cfg.dataset_format!r}")
    if raw:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(raw))}")
    return cfg


def config_fields() -> list[str]:
    return [f.name for f in fields(RunConfig)]


# -- the run --------------------------------------------------------------------

@dataclass
class ExampleOutcome:
    example: EvalExample
    primary_sql: str = ""
    exec_status: str = ""
    correct: bool = False
    strata: dict[str, str] = field(default_factory=dict)
    scores: dict[str, float] = field(default_factory=dict)
    labels: dict[str, bool] = field(default_factory=dict)
    parse_failed: dict[str, bool] = field(default_factory=dict)
    degenerate: dict[str, bool] = field(default_factory=dict)
    errors: list[dict[str, str]] = field(default_factory=list)

    @property
    def status(self) -> str:
        return "error" if self.errors else "ok"


@dataclass
class RunResult:
    reports: dict[str, CalibrationReport]
    outcomes: list[ExampleOutcome]
    errors: list[dict[str, str]]

    @property
    def failure_rate(self) -> float:
        failed = sum(1 for o in self.outcomes if o.errors)
        return failed / len(self.outcomes) if self.outcomes else 0.0


def resolve_db(db_root: Path, db_id: str) -> Path:
    for candidate in (db_root / db_id / f"{db_id}.sqlite", db_root / f"{db_id}.sqlite",
                      db_root / db_id / f"{db_id}.db", db_root / f"{db_id}.db"):
        if candidate.is_file():
            return candidate
    raise sql_exec.DatasetError(f"no database file for db_id {db_id!r} under {db_root}")


def schema_text(db: sql_exec.Database) -> str:
    tables = db.table_names()
    return verbalized.serialize_schema(
        {t: db.columns(t) for t in tables}, {t: db.sample_rows(t) for t in tables}
    )


def _make_embedder(cfg: RunConfig) -> consistency.Embedder:
    if cfg.embedder == "hashing":
        return consistency.HashingEmbedder()
    if cfg.embedder == "http":
        url = os.environ.get("SQLCONF_EMBED_URL") or cfg.embed_url
        if not url or not cfg.embed_model:
            raise ConfigError("http embedder needs embed_url and embed_model")
        return consistency.HttpEmbedder(url, cfg.embed_model, os.environ.get("SQLCONF_API_KEY"))
    raise ConfigError(f"unknown embedder {cfg.embedder!r}")


def make_gateway(cfg: RunConfig) -> Gateway:
    cache = ResponseCache(cfg.cache)
    if cfg.mode is Mode.REPLAY:
        return Gateway(cache, Mode.REPLAY)
    try:
        provider = OpenAICompatibleProvider.from_env(cfg.base_url)
    except ProviderError as exc:
        raise ConfigError(str(exc)) from exc
    return Gateway(cache, Mode.RECORD, provider)


class _Runner:
    def __init__(self, cfg: RunConfig, gateway: Gateway):
        self.cfg = cfg
        self.gateway = gateway
        self.dbs: dict[str, sql_exec.Database] = {}
        self.schemas: dict[str, str] = {}
        self.embedder = (_make_embedder(cfg)
                         if any(m.cluster is consistency.ClusterMethod.EMBEDDING for m in cfg.methods)
                         else None)

    def open_databases(self, examples: Sequence[EvalExample]) -> None:
        for ex in examples:
            if ex.db_id not in self.dbs:
                db = sql_exec.Database(resolve_db(self.cfg.db_root, ex.db_id))
                self.dbs[ex.db_id] = db
                self.schemas[ex.db_id] = schema_text(db)

    def close(self) -> None:
        for db in self.dbs.values():
            db.close()

    def _request(self, prompt: verbalized.PromptBundle, *, temperature: float = 0.0,
                 top_k: int = 0, sample_index: int = 0) -> GenerationRequest:
        return GenerationRequest(self.cfg.model_id, tuple(prompt.messages()), temperature,
                                 top_k, self.cfg.max_tokens, sample_index)

    def _question(self, ex: EvalExample) -> tuple[str, str | None]:
        return ex.question, (ex.evidence if self.cfg.use_evidence else None)

    def process(self, ex: EvalExample) -> ExampleOutcome:
        cfg = self.cfg
        out = ExampleOutcome(ex)
        db = self.dbs[ex.db_id]
        schema = self.schemas[ex.db_id]
        question, evidence = self._question(ex)
        gold = sql_exec.execute(db, ex.gold_sql, cfg.timeout)
        if not gold.ok:
            raise sql_exec.DatasetError(f"{ex.id}: gold query failed: {gold.error_text}")

        def fail(stage: str, exc: Exception) -> None:
            out.errors.append({"id": ex.id, "stage": stage, "error": f"{type(exc).__name__}: {exc}"})

        whitebox = verbalized.build_prompt(None, question, schema, evidence=evidence)
        tokens: list[TokenRecord] = []
        try:
            resp = self.gateway.generate(self._request(whitebox, top_k=cfg.top_k))
            span = extract_sql_span(resp.text)
            out.primary_sql = resp.text[span[0]:span[1]]
            tokens = clip_tokens(resp.tokens, span)
        except (CacheMiss, ProviderError, NoSqlFound) as exc:
            fail("primary", exc)

        primary = sql_exec.execute(db, out.primary_sql, cfg.timeout)
        out.exec_status = primary.status.value
        out.correct = sql_exec.results_equal(primary, gold)
        out.strata = stratify(out.primary_sql, ex.difficulty)

        analyzed = None
        if tokens:
            try:
                analyzed = AnalyzedQuery.build(out.primary_sql, tokens)
            except ValueError as exc:
                fail("align", exc)

        samples: list[str] | None = None
        for sel in cfg.methods:
            if sel.family == "logit":
                value, degenerate = 0.0, False
                if analyzed is not None:
                    ms = analyzed.score(sel.logit, sel.aggregation, cfg.folding, warn=False)
                    value, degenerate = ms.value, ms.degenerate
                out.scores[sel.name] = sql_exec.ground(value, primary, cfg.grounding)
                out.degenerate[sel.name] = degenerate
                out.labels[sel.name] = out.correct
            elif sel.family == "consistency":
                if samples is None:
                    samples = self._samples(ex, whitebox, fail)
                value = self._consistency(sel.cluster, out.primary_sql, samples, db)
                out.scores[sel.name] = sql_exec.ground(value, primary, cfg.grounding)
                out.labels[sel.name] = out.correct
            else:
                self._verbalized(sel.verbal, ex, schema, primary, gold, out, fail)
        return out

    def _samples(self, ex: EvalExample, prompt: verbalized.PromptBundle, fail) -> list[str]:
        samples = []
        for i in range(1, self.cfg.n_samples + 1):
            req = self._request(prompt, temperature=self.cfg.temperature, sample_index=i)
            try:
                text = self.gateway.generate(req).text
            except (CacheMiss, ProviderError) as exc:
                fail(f"sample {i}", exc)
                continue
            try:
                samples.append(extract_sql(text))
            except NoSqlFound:
                samples.append("")  # counts as a non-executing sample
        random.Random(f"{self.cfg.seed}:{ex.id}").shuffle(samples)
        return samples

    def _consistency(self, method: consistency.ClusterMethod, primary_sql: str,
                     samples: Sequence[str], db: sql_exec.Database) -> float:
        if method is consistency.ClusterMethod.EXECUTION:
            def cluster(items):
                return consistency.cluster_by_execution(items, db, self.cfg.timeout)
        elif method is consistency.ClusterMethod.SCHEMA:
            cluster = consistency.cluster_by_schema
        else:
            def cluster(items):
                return consistency.cluster_by_embedding(
                    items, self.embedder, self.cfg.embed_threshold, self.cfg.embed_linkage)
        return consistency.primary_consistency(primary_sql, samples, cluster)

    def _verbalized(self, method: verbalized.VerbalMethod, ex: EvalExample, schema: str,
                    primary: sql_exec.ExecResult, gold: sql_exec.ExecResult,
                    out: ExampleOutcome, fail) -> None:
        cfg = self.cfg
        question, evidence = self._question(ex)
        name = method.value
        if method in (verbalized.VerbalMethod.AUG_COT, verbalized.VerbalMethod.SELF_CHECK):
            result = None
            if method is verbalized.VerbalMethod.AUG_COT:
                result = primary.rows if primary.ok else [(f"ERROR: {primary.error_text}",)]
            prompt = verbalized.build_prompt(method, question, schema, execution_result=result,
                                             sql_query=out.primary_sql, evidence=evidence)
            label = out.correct
        else:
            prompt = verbalized.build_prompt(method, question, schema, evidence=evidence)
            label = None
        score, failed = cfg.parse_fallback, True
        try:
            text = self.gateway.generate(self._request(prompt)).text
            score, failed = verbalized.parse_or_fallback(method, text, cfg.parse_fallback)
            if label is None:
                own = sql_exec.execute(self.dbs[ex.db_id], _safe_extract(text), cfg.timeout)
                label = sql_exec.results_equal(own, gold)
                score = sql_exec.ground(score, own, cfg.grounding)
        except (CacheMiss, ProviderError) as exc:
            fail(name, exc)
        out.scores[name] = score
        out.labels[name] = bool(label)
        out.parse_failed[name] = failed


def _safe_extract(text: str) -> str:
    try:
        return extract_sql(text)
    except NoSqlFound:
        return ""


def _csv(rows: Sequence[dict[str, Any]], columns: Sequence[str]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow(row)
    return buf.getvalue()


def _fmt(value: float) -> str:
    return repr(float(value))


SCORE_BASE_COLUMNS = ("id", "db_id", "status", "exec_status", "correct", *STRATA_AXES)


def scores_table(cfg: RunConfig, outcomes: Sequence[ExampleOutcome]) -> str:
    columns = list(SCORE_BASE_COLUMNS)
    for sel in cfg.methods:
        columns += [sel.name, f"{sel.name}.correct"]
        if sel.family == "verbalized":
            columns.append(f"{sel.name}.parse_failed")
        if sel.family == "logit":
            columns.append(f"{sel.name}.degenerate")
    rows = []
    for o in outcomes:
        row: dict[str, Any] = {"id": o.example.id, "db_id": o.example.db_id, "status": o.status,
                               "exec_status": o.exec_status, "correct": int(o.correct), **o.strata}
        for sel in cfg.methods:
            row[sel.name] = _fmt(o.scores[sel.name])
            row[f"{sel.name}.correct"] = int(o.labels[sel.name])
            if sel.family == "verbalized":
                row[f"{sel.name}.parse_failed"] = int(o.parse_failed[sel.name])
            if sel.family == "logit":
                row[f"{sel.name}.degenerate"] = int(o.degenerate[sel.name])
        rows.append(row)
    return _csv(rows, columns)


def write_reports(output_dir: Path, method_rows: Sequence[tuple[MethodSelector, CalibrationReport]],
                  header: dict[str, Any]) -> None:
    all_rows = []
    for sel, report in method_rows:
        (output_dir / f"report_{sel.name}.json").write_text(
            report_to_json(report, {**header, "method": sel.name}), encoding="utf-8")
        all_rows += report_rows(sel.method_column, sel.aggregation_column, report)
    (output_dir / "report.csv").write_text(reports_to_csv(all_rows), encoding="utf-8")
    for axis in STRATA_AXES:
        picked = [r for r in all_rows if r["stratum"].startswith(f"{axis}=")]
        picked = [{**r, "stratum": r["stratum"].split("=", 1)[1]} for r in picked]
        (output_dir / f"strata_{axis}.csv").write_text(reports_to_csv(picked), encoding="utf-8")


def run(cfg: RunConfig, gateway: Gateway | None = None) -> RunResult:
    """Generate, score, label and report every example of the configured dataset."""
    cfg.validate()
    examples = load_dataset(cfg.dataset, cfg.dataset_format)
    runner = _Runner(cfg, gateway or make_gateway(cfg))
    try:
        runner.open_databases(examples)
        workers = cfg.workers or os.cpu_count() or 1
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(runner.process, examples))
    finally:
        runner.close()

    reports: dict[str, CalibrationReport] = {}
    method_rows = []
    for sel in cfg.methods:
        labeled = [LabeledScore(min(max(o.scores[sel.name], 0.0), 1.0), o.labels[sel.name], o.strata)
                   for o in outcomes]
        report = calibration_report(labeled, cfg.ece_bins)
        reports[sel.name] = report
        method_rows.append((sel, report))
    errors = [e for o in outcomes for e in o.errors]

    out_dir = cfg.output_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "scores.csv").write_text(scores_table(cfg, outcomes), encoding="utf-8")
    write_reports(out_dir, method_rows, cfg.header())
    (out_dir / "errors.json").write_text(json.dumps(errors, indent=2) + "\n", encoding="utf-8")
    return RunResult(reports, outcomes, errors)


def report_from_scores(path: str | Path, num_bins: int = 10) -> list[dict[str, str]]:
    """Recompute report rows from a stored ``scores.csv``."""
    with Path(path).open(encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        rows = list(reader)
        columns = reader.fieldnames or []
    out = []
    for col in columns:
        if col in SCORE_BASE_COLUMNS or "." in col or f"{col}.correct" not in columns:
            continue
        sel = MethodSelector.parse(col)
        labeled = [LabeledScore(float(r[col]), r[f"{col}.correct"] == "1",
                                {a: r[a] for a in STRATA_AXES if a in r}) for r in rows]
        out += report_rows(sel.method_column, sel.aggregation_column,
                           calibration_report(labeled, num_bins))
    return out


def ablate(cfg: RunConfig, feature: str, gateway: Gateway | None = None) -> list[dict[str, str]]:
    """Paired runs with ``feature`` on and off; one delta row per method."""
    if feature not in FoldingConfig.FLAGS:
        raise ConfigError(f"unknown folding flag {feature!r}; choose from {', '.join(FoldingConfig.FLAGS)}")
    results = {}
    for state in (True, False):
        sub = replace(cfg, folding=replace(cfg.folding, **{feature: state}),
                      output_dir=cfg.output_dir / f"{feature}_{'on' if state else 'off'}")
        results[state] = run(sub, gateway)
    rows = []
    for sel in cfg.methods:
        on, off = results[True].reports[sel.name], results[False].reports[sel.name]
        delta_auc = (None if on.auc is None or off.auc is None else off.auc - on.auc)
        rows.append({
            "method": sel.name, "variant": f"w/o {feature}",
            "auc_full": _opt(on.auc), "auc_without": _opt(off.auc), "delta_auc": _opt(delta_auc),
            "ece_full": _fmt(on.ece), "ece_without": _fmt(off.ece), "delta_ece": _fmt(off.ece - on.ece),
        })
    text = _csv(rows, list(rows[0]) if rows else ["method"])
    (cfg.output_dir / f"ablation_{feature}.csv").write_text(text, encoding="utf-8")
    return rows


def _opt(value: float | None) -> str:
    return "" if value is None else _fmt(value)
