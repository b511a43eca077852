"""Confidence estimation and calibration evaluation for model-generated SQL."""

from sqlconf.lexer import Lexeme, LexemeKind, Role, TokenRecord, align, lex_sql
from sqlconf.logit_scoring import Aggregation, AnalyzedQuery, FoldingConfig, Method, MethodScore
from sqlconf.metrics import LabeledScore, auc_roc, ece, stratify
from sqlconf.schema_link import SchemaLinks, extract

__all__ = [
    "Aggregation",
    "AnalyzedQuery",
    "FoldingConfig",
    "LabeledScore",
    "Lexeme",
    "LexemeKind",
    "Method",
    "MethodScore",
    "Role",
    "SchemaLinks",
    "TokenRecord",
    "align",
    "auc_roc",
    "ece",
    "extract",
    "lex_sql",
    "stratify",
]

__version__ = "0.1.0"
