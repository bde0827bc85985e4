"""
Federating a rule across nodes
==============================

The re-identification rule joins a windowed block on stream :ssrA with a
Now block on :ssrB. Each stream lives on its own node. The root pushes the
:ssrB block, with the filters it can evaluate alone, to node b and joins
the returned rows with its local window.
"""
from streamfusion import parse_fact_document, parse_rule_document
from streamfusion.federation import NodeDescriptor, compare, parse_topology, rewrite, run_federated, run_monolithic
from streamfusion.ql.printer import pretty_print
from streamfusion.terms import iri

RULE = '''
ssr:rule_w_3 a sh:NodeShape ; sh:rule [ a sh:CQELSRule ; sh:construct """
  CONSTRUCT { ?B1 sosa:isSampleOf ?O . }
  WHERE {
    STREAM <:ssrA> @?Te window[5 sec] { ?Trk2 :trk ?B2 . }
    STREAM <:ssrB> {
      <<?Trk1 :trk ?B1>> @ ?T .
      <<?B1 :vMatch ?B2>> :score ?S .
      ?B2 sosa:isSampleOf ?O .
      ?Trk2 :ends ?Te .
      FILTER (?T < ?Te + 3 && ?S > 0.8)
    }
  }
""" ] .
'''
A = """
:trk2 :trk :b2; sosa:resultTime 2.
:trk3 :trk :b3; sosa:resultTime 3.
"""
B = """
<<:prop7 :trk :b7>> a :TrackletProposal; sosa:resultTime 4.
<<:b7 :vMatch :b2>> :score 0.9; sosa:resultTime 4.
<<:b7 :vMatch :b3>> :score 0.5; sosa:resultTime 4.
:b2 sosa:isSampleOf :o2; sosa:resultTime 4.
:b3 sosa:isSampleOf :o3; sosa:resultTime 4.
:trk2 :ends 2; sosa:resultTime 4.
:trk3 :ends 3; sosa:resultTime 4.
"""

rule = parse_rule_document(RULE)[0]
ssr_a, ssr_b = iri(":ssrA"), iri(":ssrB")
traces = {ssr_a: parse_fact_document(A), ssr_b: parse_fact_document(B)}

# the plan: one fragment for node b, and the root rule reading its rows
registry = [NodeDescriptor("root", streams=frozenset({ssr_a})), NodeDescriptor("b", streams=frozenset({ssr_b}))]
plan = rewrite(rule, registry, "root")
print(plan.stats)
for frag in plan.subqueries:
    print("fragment for", frag.node, "exports", [v.name for v in frag.exported])
    print(pretty_print(frag.rule))
print(pretty_print(plan.root_rule))

# run it on threads over in-process queues, then over TCP on localhost
ticks = range(0, 6)
mono = run_monolithic([rule], traces, ticks)
for text in ("node root inproc :ssrA\nnode b inproc :ssrB\n",
             "node root inproc :ssrA\nnode b 127.0.0.1:0 :ssrB\n"):
    fed = run_federated(parse_topology(text), [rule], traces, ticks)
    print("differing ticks:", compare(mono, fed.outputs), "audit:", dict(fed.audit))

for t in ticks:
    for f in mono[t]:
        print(t, f)
