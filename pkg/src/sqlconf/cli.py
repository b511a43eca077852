"""Command-line entry point: ``sqlconf <command> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from sqlconf import harness, metrics, sql_exec
from sqlconf.lexer import AlignmentMismatch
from sqlconf.llm_gateway import WireToken, verify_cache
from sqlconf.logit_scoring import Aggregation, AnalyzedQuery, EmptySelection, FoldingConfig, Method

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DATASET = 2
EXIT_PARTIAL = 3

log = logging.getLogger("sqlconf")


def _read_text(arg: str) -> str:
    return sys.stdin.read() if arg == "-" else Path(arg).read_text(encoding="utf-8")


def _folding_from_args(args: argparse.Namespace) -> FoldingConfig:
    flags = {name: not getattr(args, f"no_{name}") for name in FoldingConfig.FLAGS}
    return FoldingConfig(**flags, top_k=args.top_k, sac_roles=args.sac_roles,
                         strict_empty=args.strict_empty)


def cmd_score(args: argparse.Namespace) -> int:
    try:
        wire = [WireToken.from_json(t) for t in json.loads(_read_text(args.logprobs))]
    except (OSError, ValueError, KeyError, TypeError) as exc:
        print(f"error: cannot read logprobs: {exc}", file=sys.stderr)
        return EXIT_DATASET
    tokens = [t.to_record() for t in wire]
    sql = _read_text(args.sql) if args.sql else "".join(t.text for t in tokens)
    try:
        query = AnalyzedQuery.build(sql, tokens)
        result = query.score(Method(args.method.upper()), Aggregation.parse(args.aggregation),
                             _folding_from_args(args))
    except AlignmentMismatch as exc:
        print(f"error: tokens do not match the SQL text: {exc}", file=sys.stderr)
        return EXIT_DATASET
    except EmptySelection as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATASET
    print(json.dumps({"method": result.name, "score": result.value,
                      "lexemes": result.lexeme_count, "degenerate": result.degenerate}))
    return EXIT_OK


def _finish(result: harness.RunResult, cfg: harness.RunConfig) -> int:
    for name, report in result.reports.items():
        auc = "n/a" if report.auc is None else f"{report.auc:.4f}"
        print(f"{name:28s} AUC {auc:>7s}  ECE {report.ece:.4f}  n={report.n}")
    if result.errors:
        print(f"{len(result.errors)} per-example errors, see {cfg.output_dir / 'errors.json'}",
              file=sys.stderr)
    return EXIT_PARTIAL if result.failure_rate > cfg.failure_threshold else EXIT_OK


def _guard(fn, args: argparse.Namespace) -> int:
    try:
        return fn(args)
    except harness.ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (harness.FormatError, sql_exec.DatasetError, FileNotFoundError) as exc:
        print(f"dataset error: {exc}", file=sys.stderr)
        return EXIT_DATASET


def cmd_evaluate(args: argparse.Namespace) -> int:
    cfg = harness.load_config(args.config, output_dir=args.output_dir, mode=args.mode)
    return _finish(harness.run(cfg), cfg)


def cmd_ablate(args: argparse.Namespace) -> int:
    cfg = harness.load_config(args.config, output_dir=args.output_dir, mode=args.mode)
    rows = harness.ablate(cfg, args.feature)
    for row in rows:
        print(f"{row['method']:28s} {row['variant']:30s} dAUC {row['delta_auc'] or 'n/a'}  "
              f"dECE {row['delta_ece']}")
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    rows = harness.report_from_scores(args.input, args.bins)
    text = metrics.reports_to_csv(rows)
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_cache_verify(args: argparse.Namespace) -> int:
    try:
        problems = verify_cache(args.cache)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    for p in problems:
        print(p)
    if problems:
        print(f"{len(problems)} problems found", file=sys.stderr)
        return EXIT_DATASET
    print("cache ok")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sqlconf", description="Confidence estimation for generated SQL")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("score", help="score one query from a token-logprob JSON file")
    p.add_argument("--sql", help="SQL file or '-' for stdin (default: the token texts joined)")
    p.add_argument("--logprobs", required=True, help="JSON array of {token, logprob, top_logprobs}")
    p.add_argument("--method", default="SAC", choices=["FTC", "SLC", "SAC", "ftc", "slc", "sac"])
    p.add_argument("--aggregation", default="avg")
    for name in FoldingConfig.FLAGS:
        p.add_argument(f"--no-{name.replace('_', '-')}", dest=f"no_{name}", action="store_true")
    p.add_argument("--top-k", type=int, default=5)
    p.add_argument("--sac-roles", choices=["critical", "all"], default="critical")
    p.add_argument("--strict-empty", action="store_true")
    p.set_defaults(fn=cmd_score)

    for name, fn, help_text in (("evaluate", cmd_evaluate, "full run from a config file"),
                                ("ablate", cmd_ablate, "paired runs toggling one folding flag")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True)
        p.add_argument("--output-dir", help="override output_dir from the config")
        p.add_argument("--mode", choices=["record", "replay"], help="override mode from the config")
        if name == "ablate":
            p.add_argument("--feature", required=True, choices=FoldingConfig.FLAGS)
        p.set_defaults(fn=fn)

    p = sub.add_parser("report", help="recompute metrics from a stored scores.csv")
    p.add_argument("--input", required=True)
    p.add_argument("--bins", type=int, default=10)
    p.add_argument("--output")
    p.set_defaults(fn=cmd_report)

    p = sub.add_parser("cache", help="response cache maintenance")
    cache_sub = p.add_subparsers(dest="cache_command", required=True)
    v = cache_sub.add_parser("verify", help="check cache integrity")
    v.add_argument("--cache", required=True)
    v.set_defaults(fn=cmd_cache_verify)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return _guard(args.fn, args)


if __name__ == "__main__":
    sys.exit(main())
