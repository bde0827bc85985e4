from .harness import (
    Federation, FederatedRun, NodeSpec, Topology, compare, load_topology, parse_topology, run_federated,
    run_monolithic, trace_ticks,
)
from .node import Node, Subscription, SubscriptionError
from .rewrite import Fragment, NodeDescriptor, PlanError, QueryPlan, check_pushdown, rewrite
from .transport import NodeUnreachable

__all__ = [
    "Federation", "FederatedRun", "Fragment", "Node", "NodeDescriptor", "NodeSpec", "NodeUnreachable", "PlanError",
    "QueryPlan", "Subscription", "SubscriptionError", "Topology", "check_pushdown", "compare", "load_topology",
    "parse_topology", "rewrite", "run_federated", "run_monolithic", "trace_ticks",
]
