"""Regenerate the bundled 20-example fixture: toy database, dataset, config and cache.

The cache is recorded from a deterministic synthetic provider, so the
evaluation pipeline can replay it offline.  Generated queries fall in three
groups:

* correct queries whose optional lexemes (aliases, commas, redundant
  parentheses, semicolons) carry low token probabilities,
* wrong but executable queries with middling probabilities on critical
  lexemes and confident optional lexemes,
* non-executable queries generated with high confidence.

Run from the repository root:  python3 scripts/build_fixture.py
"""

from __future__ import annotations

import hashlib
import json
import math
import random
import re
import shutil
import sqlite3
import sys
from dataclasses import replace
from pathlib import Path

from sqlconf.harness import load_config, load_dataset, run, schema_text
from sqlconf.lexer import TRIVIA, Role, lex_sql
from sqlconf.llm_gateway import (
    CallableProvider, Gateway, GenerationRequest, GenerationResponse, Mode, ResponseCache, WireToken,
)
from sqlconf.logit_scoring import classify_roles
from sqlconf.schema_link import extract
from sqlconf.sql_exec import Database, execute

OUT = Path(__file__).resolve().parents[1] / "src" / "sqlconf" / "data" / "fixture"
DB_ID = "concert_singer"
FIXED_CLOCK = 1767225600.0

SCHEMA = """
CREATE TABLE singer (singer_id INTEGER PRIMARY KEY, name TEXT, country TEXT, age INTEGER, is_male INTEGER);
CREATE TABLE stadium (stadium_id INTEGER PRIMARY KEY, location TEXT, name TEXT, capacity INTEGER, average INTEGER);
CREATE TABLE concert (concert_id INTEGER PRIMARY KEY, concert_name TEXT, theme TEXT, stadium_id INTEGER, year TEXT);
CREATE TABLE singer_in_concert (concert_id INTEGER, singer_id INTEGER);
"""
ROWS = {
    "singer": [
        (1, "Joe Sharp", "Netherlands", 52, 0), (2, "Timbaland", "United States", 32, 1),
        (3, "Justin Brown", "France", 29, 1), (4, "Rose White", "France", 41, 0),
        (5, "John Nizinik", "France", 30, 1), (6, "Tribal King", "France", 25, 1),
        (7, "Ada Lind", "Sweden", 19, 0),
    ],
    "stadium": [
        (1, "Raith Rovers", "Stark's Park", 10104, 864), (2, "Ayr United", "Somerset Park", 11998, 1294),
        (3, "East Fife", "Bayview Stadium", 2000, 1477), (4, "Queen's Park", "Hampden Park", 52500, 730),
    ],
    "concert": [
        (1, "Auditions", "Free choice", 1, "2014"), (2, "Super bootcamp", "Free choice 2", 2, "2014"),
        (3, "Home Visits", "Bleeding Love", 2, "2015"), (4, "Week 1", "Wide Awake", 4, "2014"),
        (5, "Week 2", "Happy Tonight", 3, "2015"),
    ],
    "singer_in_concert": [(1, 2), (1, 3), (1, 5), (2, 3), (2, 6), (3, 5), (4, 4), (5, 6), (5, 7)],
}

C, W, X = "correct", "wrong", "broken"

# (question, gold, generated, group, difficulty, evidence)
EXAMPLES = [
    ("How many singers do we have?",
     "SELECT count(*) FROM singer",
     "SELECT COUNT(*) AS total FROM singer;", C, "simple", None),
    ("Show name, country, age for all singers ordered by age from the oldest to the youngest.",
     "SELECT name, country, age FROM singer ORDER BY age DESC",
     "SELECT T1.name, T1.country, T1.age FROM singer AS T1 ORDER BY T1.age DESC;", C, "simple", None),
    ("What is the average, minimum, and maximum age of all singers from France?",
     "SELECT avg(age), min(age), max(age) FROM singer WHERE country = 'France'",
     "SELECT AVG(age) AS avg_age, MIN(age) AS min_age, MAX(age) AS max_age FROM singer WHERE country = 'France';",
     C, "moderate", None),
    ("What are the names of singers older than 30?",
     "SELECT name FROM singer WHERE age > 30",
     "SELECT name FROM singer WHERE age >= 30", W, "simple", None),
    ("How many concerts are there in year 2014 or 2015?",
     "SELECT count(*) FROM concert WHERE year = '2014' OR year = '2015'",
     "SELECT COUNT(*) AS cnt FROM concert WHERE (year = '2014' OR year = '2015');", C, "simple", None),
    ("What is the maximum capacity of all stadiums?",
     "SELECT max(capacity) FROM stadium",
     "SELECT MAX(capacity) FROM stadiums", X, "simple", None),
    ("List the distinct countries of singers above age 20.",
     "SELECT DISTINCT country FROM singer WHERE age > 20",
     "SELECT DISTINCT T1.country FROM singer AS T1 WHERE T1.age > 20;", C, "simple", None),
    ("Show the stadium name and the number of concerts in each stadium.",
     "SELECT T2.name, count(*) FROM concert AS T1 JOIN stadium AS T2 ON T1.stadium_id = T2.stadium_id GROUP BY T1.stadium_id",
     "SELECT T2.name, count(*) FROM concert AS T1 JOIN stadium AS T2 ON T1.stadium_id = T2.stadium_id",
     W, "challenging", None),
    ("What are the names of stadiums with capacity above 5000?",
     "SELECT name FROM stadium WHERE capacity > 5000",
     "SELECT name FROM stadium WHERE capacity > 5000", C, "simple", None),
    ("Show the names of singers who performed in concert 1.",
     "SELECT T1.name FROM singer AS T1 JOIN singer_in_concert AS T2 ON T1.singer_id = T2.singer_id WHERE T2.concert_id = 1",
     "SELECT name FROM singer WHERE concert_id = 1", X, "moderate", None),
    ("How many singers are male?",
     "SELECT count(*) FROM singer WHERE is_male = 1",
     "SELECT COUNT(singer_id) AS n FROM singer WHERE is_male = 1;", C, "simple",
     "male refers to is_male = 1"),
    ("Which country has the most singers?",
     "SELECT country FROM singer GROUP BY country ORDER BY count(*) DESC LIMIT 1",
     "SELECT country FROM singer GROUP BY country ORDER BY count(*) ASC LIMIT 1", W, "moderate", None),
    ("What are the names and locations of all stadiums?",
     "SELECT name, location FROM stadium",
     "SELECT name, location FROM stadium", C, "simple", None),
    ("How many concerts were held in each year?",
     "SELECT year, count(*) FROM concert GROUP BY year",
     "SELECT year, COUNT(*) FROM concert GROUP BY", X, "moderate", None),
    ("List the names and themes of concerts held in 2014.",
     "SELECT concert_name, theme FROM concert WHERE year = '2014'",
     "SELECT concert_name, theme FROM concert WHERE year = '2014'", C, "simple", None),
    ("What is the average capacity of stadiums?",
     "SELECT avg(capacity) FROM stadium",
     "SELECT avg(average) FROM stadium", W, "simple", "capacity is the number of seats"),
    ("Find the number of singers who are not from France.",
     "SELECT count(*) FROM singer WHERE country != 'France'",
     "SELECT COUNT(*) AS cnt FROM singer WHERE country <> 'France';", C, "simple", None),
    ("List the names of singers who performed in a concert in 2015.",
     "SELECT DISTINCT T1.name FROM singer AS T1 JOIN singer_in_concert AS T2 ON T1.singer_id = T2.singer_id "
     "JOIN concert AS T3 ON T2.concert_id = T3.concert_id WHERE T3.year = '2015'",
     "SELECT DISTINCT T1.name FROM singer AS T1 JOIN singer_in_concert AS T2 ON T1.singer_id = T2.singer_id "
     "JOIN concert AS T3 ON T2.concert_id = T3.id WHERE T3.year = '2015'", X, "challenging", None),
    ("Which stadium has the largest capacity?",
     "SELECT name FROM stadium ORDER BY capacity DESC LIMIT 1",
     "SELECT location FROM stadium ORDER BY capacity DESC LIMIT 1", W, "simple", None),
    ("What is the name of the youngest singer?",
     "SELECT name FROM singer ORDER BY age ASC LIMIT 1",
     "SELECT name FROM singer ORDER BY age LIMIT 1", C, "simple", None),
]

# token probability ranges per group: (critical/other tokens, optional tokens)
PROB_RANGES = {
    C: ((0.82, 0.97), (0.02, 0.12)),
    W: ((0.62, 0.80), (0.96, 0.995)),
    X: ((0.93, 0.99), (0.95, 0.99)),
}
FILLER_PROB = (0.97, 0.999)

_TOKEN_RE = re.compile(r"\s*(?:[A-Za-z_][A-Za-z_0-9]*|\d+(?:\.\d+)?|'[^']*'|!=|<>|<=|>=|==|\S)|\s+")


def subword_tokens(text: str) -> list[str]:
    """Whitespace attaches to the following word; long words split into 4-character pieces."""
    out = []
    for piece in _TOKEN_RE.findall(text):
        word = piece.lstrip()
        lead = piece[: len(piece) - len(word)]
        if len(word) > 6 and (word[0].isalpha() or word[0] == "_"):
            chunks = [word[i:i + 4] for i in range(0, len(word), 4)]
            out.append(lead + chunks[0])
            out.extend(chunks[1:])
        else:
            out.append(piece)
    assert "".join(out) == text
    return out


def _rng(*parts: object) -> random.Random:
    digest = hashlib.sha256("|".join(map(str, parts)).encode()).hexdigest()
    return random.Random(int(digest[:16], 16))


def _alternatives(tok: str, pool: list[str], rng: random.Random) -> list[str]:
    lead = tok[: len(tok) - len(tok.lstrip())]
    word = tok.strip()
    alts = []
    if word.isalpha() and word.upper() != word.lower():
        alts.append(lead + (word.lower() if word.isupper() else word.upper()))
    if word in ("!=", "<>"):
        alts.append(lead + ("<>" if word == "!=" else "!="))
    others = [p for p in pool if p.strip() and p.strip() != word]
    rng.shuffle(others)
    alts += [lead + o.strip() for o in others[:3]]
    seen, uniq = {tok}, []
    for a in alts:
        if a not in seen:
            seen.add(a)
            uniq.append(a)
    return uniq[:4]


def whitebox_tokens(sql: str, group: str, key: str) -> tuple[str, list[WireToken]]:
    rng = _rng("whitebox", key)
    confidence = {C: 85, W: 70, X: 90}[group]
    text = f" {sql}\nConfidence: {confidence}"
    lexemes = lex_sql(sql)
    roles = classify_roles(lexemes, extract(sql))
    pieces = subword_tokens(text)
    crit_range, opt_range = PROB_RANGES[group]
    pool = [p for p in pieces if p.strip() and p.strip()[0].isalpha()]
    wire = []
    pos = 0
    for piece in pieces:
        start, end = pos - 1, pos - 1 + len(piece)  # offsets inside ``sql``
        pos += len(piece)
        covered = [i for i, lx in enumerate(lexemes)
                   if lx.kind not in TRIVIA and lx.span[0] < end and lx.span[1] > start]
        if not covered:
            lo, hi = FILLER_PROB
        elif all(roles[i] is Role.EXCLUDABLE for i in covered):
            lo, hi = opt_range
        else:
            lo, hi = crit_range
        p = rng.uniform(lo, hi)
        alts = _alternatives(piece, pool, rng)
        rest = (1.0 - p) * rng.uniform(0.5, 0.9)
        weights = [rng.random() + 0.1 for _ in alts]
        total = sum(weights)
        tops = [(piece, math.log(p))] + [(a, math.log(rest * w / total)) for a, w in zip(alts, weights)]
        wire.append(WireToken(piece, math.log(p), tuple(tops)))
    return text, wire


def lower_keywords(sql: str) -> str:
    return " ".join(w.lower() if w.isupper() and w.isalpha() else w for w in sql.split(" "))


def sample_texts(gold: str, generated: str, group: str, key: str, n: int) -> list[str]:
    broken = re.sub(r"\bFROM\b", "FORM", generated, count=1)
    empty = f"SELECT * FROM ({generated}) LIMIT 0"
    if group == C:
        pool = [generated, gold, lower_keywords(generated)] * 3 + [empty, broken]
        plan = pool[:7] + [empty, empty, broken]
    elif group == W:
        plan = [generated] * 4 + [gold] * 4 + [broken, empty]
    else:
        plan = [generated] * 3 + [gold] * 5 + [lower_keywords(gold), empty if "GROUP BY" not in generated else gold]
    plan = plan[:n]
    _rng("samples", key).shuffle(plan)
    return plan


def build_database(path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    if path.exists():
        path.unlink()
    conn = sqlite3.connect(path)
    conn.executescript(SCHEMA)
    for table, rows in ROWS.items():
        marks = ", ".join("?" * len(rows[0]))
        conn.executemany(f"INSERT INTO {table} VALUES ({marks})", rows)
    conn.commit()
    conn.execute("VACUUM")
    conn.close()


CONFIG = """\
# Bundled fixture run: replay the recorded cache over the toy database.
dataset = dataset.json
dataset_format = bird
db_root = db
cache = cache.jsonl
output_dir = sqlconf-fixture-out
mode = replay
model_id = synthetic-sql-1
methods = FTC-Product, FTC-Average, SLC-Product, SLC-Average, SAC-Product, SAC-Average, Consistency-Execution, Consistency-Schema, Consistency-Embedding, Vanilla, CoT, AugCoT, SelfCheck
n_samples = 10
temperature = 1.0
top_k = 5
grounding = true
ece_bins = 10
seed = 7
workers = 4
"""


def main() -> int:
    OUT.mkdir(parents=True, exist_ok=True)
    db_path = OUT / "db" / DB_ID / f"{DB_ID}.sqlite"
    build_database(db_path)
    records = []
    for i, (q, gold, gen, group, diff, ev) in enumerate(EXAMPLES):
        rec = {"question_id": i, "db_id": DB_ID, "question": q, "evidence": ev or "", "SQL": gold,
               "difficulty": diff}
        records.append(rec)
    (OUT / "dataset.json").write_text(json.dumps(records, indent=2) + "\n", encoding="utf-8")
    (OUT / "fixture.cfg").write_text(CONFIG, encoding="utf-8")

    cfg = load_config(OUT / "fixture.cfg")
    examples = load_dataset(cfg.dataset, cfg.dataset_format)
    by_question = {}
    with Database(db_path) as db:
        schema = schema_text(db)
        for ex, (_, gold, gen, group, _, _) in zip(examples, EXAMPLES):
            res_gen, res_gold = execute(db, gen), execute(db, gold)
            assert res_gold.ok, ex
            agree = res_gen.ok and res_gen.multiset() == res_gold.multiset()
            assert agree == (group == C), (ex.id, group, res_gen)
            assert res_gen.ok == (group != X), (ex.id, group)
            by_question[ex.question] = (ex, gold, gen, group)

    def respond(req: GenerationRequest) -> GenerationResponse:
        user = req.messages[-1][1]
        ex = next(v for q, v in by_question.items() if f"Question: {q}" in user)
        ex, gold, gen, group = ex
        key = f"{ex.id}:{req.sample_index}"
        system = req.messages[0][1]
        if req.top_k_logprobs:
            text, wire = whitebox_tokens(gen, group, key)
            return GenerationResponse(text, tuple(wire))
        if req.sample_index:
            samples = sample_texts(gold, gen, group, ex.id, cfg.n_samples)
            return GenerationResponse(f" {samples[req.sample_index - 1]}")
        rng = _rng("verbal", ex.id, system[:40])
        conf = {C: rng.randint(70, 95), W: rng.randint(60, 90), X: rng.randint(75, 95)}[group]
        if "(T)" in system:
            return GenerationResponse("(T)" if group == C or rng.random() < 0.4 else "(F) The query is wrong.")
        if "scratchpad" in system.lower():
            if "execution result" in system:
                return GenerationResponse(f"Scratchpad: Let's think step by step. The result looks "
                                          f"plausible.\nConfidence: {conf}")
            return GenerationResponse(f"```sql\n{gen}\n```\nScratchpad: Let's think step by step. "
                                      f"The query matches the question.\nConfidence: {conf}")
        if ex.question.startswith("List the distinct"):
            # one response without a parsable score
            return GenerationResponse(f" {gen}\nI am fairly sure about this one.")
        return GenerationResponse(f" {gen}\nConfidence: {conf}")

    cache_path = OUT / "cache.jsonl"
    if cache_path.exists():
        cache_path.unlink()
    gateway = Gateway(ResponseCache(cache_path, clock=lambda: FIXED_CLOCK), Mode.RECORD,
                      CallableProvider(respond), max_in_flight=1)
    record_cfg = replace(cfg, mode=Mode.RECORD, workers=1, output_dir=OUT.parent / "_fixture_tmp")
    result = run(record_cfg, gateway)
    shutil.rmtree(record_cfg.output_dir)
    for name, report in result.reports.items():
        print(f"{name:24s} auc={report.auc} ece={report.ece:.4f}")
    print(f"{len(ResponseCache(cache_path))} cache records, schema {len(schema)} chars")
    return 0


if __name__ == "__main__":
    sys.exit(main())
