"""Construct-rule language: AST, parser, printer and static analysis."""
from .analysis import RuleReport, analyze_rule
from .ast import (
    HARD, NOW, SOFT, BinOp, BodySpec, Call, Const, Now, QuotedPattern, Range, Rule,
    StreamBlock, TermConst, TriplePattern, Var,
)
from .parser import RuleError, parse_query, parse_rule_document, prelude_text
from .printer import pretty_print

__all__ = [
    "HARD", "NOW", "SOFT", "BinOp", "BodySpec", "Call", "Const", "Now", "QuotedPattern", "Range",
    "Rule", "RuleError", "RuleReport", "StreamBlock", "TermConst", "TriplePattern", "Var",
    "analyze_rule", "parse_query", "parse_rule_document", "pretty_print", "prelude_text",
]
