"""Rule-driven fusion of detection streams over RDF-star facts."""
from .config import EngineConfig, load_config
from .fusion import Hypothesis, RuleWeights, WorldSelection, select_world
from .pipeline import TrackingPipeline, tracking_rules
from .ql.parser import parse_query, parse_rule_document
from .runtime import Engine
from .terms import BlankNode, Iri, Literal, QuotedTriple, StaticGraph, TimestampedFact
from .turtle import parse_fact_document, serialize_fact

__version__ = "0.1.0"

__all__ = [
    "BlankNode", "Engine", "EngineConfig", "Hypothesis", "Iri", "Literal", "QuotedTriple", "RuleWeights",
    "StaticGraph", "TimestampedFact", "TrackingPipeline", "WorldSelection", "load_config", "parse_fact_document",
    "parse_query", "parse_rule_document", "select_world", "serialize_fact", "tracking_rules",
]
