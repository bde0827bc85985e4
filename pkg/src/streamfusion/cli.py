"""Command-line entry point: parse, run, train, federate, config."""
from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from .config import EngineConfig, load_config
from .fusion import RuleWeights, explanation_lines
from .learner import read_samples, train
from .lexer import ParseError
from .pipeline import TrackingPipeline, tracking_rules
from .ql.analysis import analyze_rule
from .ql.parser import RuleError, parse_rule_document
from .ql.printer import dump_ast, pretty_print
from .terms import PRELUDE_PREFIXES, compact, fact_key, iri
from .tracker import read_detections
from .turtle import parse_fact_document, serialize_facts

log = logging.getLogger("streamfusion")

EXIT_OK, EXIT_FAIL, EXIT_PARSE, EXIT_UNREACHABLE = 0, 1, 2, 3


class UsageError(Exception):
    """Bad input file or flag; reported with exit code 2."""


def _error(msg: str, code: int) -> int:
    print(f"error: {' '.join(str(msg).split())}", file=sys.stderr)
    return code


def _config(args) -> EngineConfig:
    try:
        return load_config(args.config, args.set or ())
    except (OSError, ValueError, TypeError) as exc:
        raise UsageError(f"config: {exc}") from None


def _read(path) -> str:
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from None


def _rules(path, config: EngineConfig, check: bool = True):
    if path is None:
        return tracking_rules(config)
    try:
        return parse_rule_document(_read(path), soft_pattern=config.soft_rule_id_pattern,
                                   tick_seconds=config.tick_seconds, check=check)
    except (ParseError, RuleError) as exc:
        raise UsageError(f"{path}: {exc}") from None


def _write(path, text: str):
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


# parse ---------------------------------------------------------------------------

def cmd_parse(args) -> int:
    config = _config(args)
    rules = _rules(args.rules, config)
    out = []
    for rule in rules:
        report = analyze_rule(rule)
        out.append(dump_ast(rule) if args.ast else pretty_print(rule, config.tick_seconds))
        streams = ",".join(sorted(compact(s) for s in report.streams)) or "-"
        out.append(f"# {compact(rule.id)} kind={rule.kind} streams={streams} "
                   f"vars={len(report.variables)} verdict={report.verdict}\n")
    _write(None, "".join(out))
    return EXIT_OK


# run -----------------------------------------------------------------------------

def cmd_run(args) -> int:
    config = _config(args)
    if args.emit_predictions is not None:
        config = dataclasses.replace(config, emit_predictions=args.emit_predictions)
    rules = _rules(args.rules, config)
    try:
        records = read_detections(args.detections)
    except OSError as exc:
        raise UsageError(f"cannot read {args.detections}: {exc.strerror}") from None
    except ValueError as exc:
        raise UsageError(f"{args.detections}: {exc}") from None
    weights = None
    if args.weights:
        try:
            weights = RuleWeights.loads(_read(args.weights))
        except ValueError as exc:
            raise UsageError(f"{args.weights}: {exc}") from None

    pipeline = TrackingPipeline(rules, weights, config)
    results = pipeline.run(records)
    _write(args.tracks, "".join(line + "\n" for r in results for line in r.mot_lines()))
    if args.output:
        _write(args.output, serialize_facts(f for r in results for f in sorted(r.output, key=fact_key)))
    if args.explain:
        _write(args.explain, "".join(explanation_lines(r.explanations) for r in results))

    errors = sum(pipeline.engine.diagnostics.values())
    for key, n in sorted(pipeline.engine.diagnostics.items()):
        print(f"warning: {n} {key.replace('_', ' ')} event(s)", file=sys.stderr)
    if errors and args.strict:
        return _error(f"{errors} evaluation error(s) under --strict", EXIT_FAIL)
    return EXIT_OK


# train ---------------------------------------------------------------------------

def cmd_train(args) -> int:
    config = _config(args)
    rules = _rules(args.rules, config) if args.rules else []
    try:
        samples = read_samples(args.samples)
    except OSError as exc:
        raise UsageError(f"cannot read {args.samples}: {exc.strerror}") from None
    except (ParseError, ValueError) as exc:
        raise UsageError(f"{args.samples}: {exc}") from None
    try:
        init = RuleWeights.loads(_read(args.init)) if args.init else RuleWeights()
    except ValueError as exc:
        raise UsageError(f"{args.init}: {exc}") from None
    init.ensure(r.id for r in rules if r.is_soft)
    try:
        report = train(samples, init, lr=args.lr, max_epochs=args.epochs, features=args.features)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    _write(args.out, report.weights.dumps())
    if args.report:
        _write(args.report, report.summary())
    print(f"epochs={report.iterations} converged={'yes' if report.converged else 'no'} "
          f"infeasible={len(report.infeasible)}", file=sys.stderr)
    return EXIT_OK


# federate ------------------------------------------------------------------------

def _traces(specs) -> dict:
    traces: dict = {}
    for spec in specs or ():
        stream, sep, path = spec.partition("=")
        if not sep or not stream or not path:
            raise UsageError(f"--trace expects stream=file, got {spec!r}")
        s = iri(stream, PRELUDE_PREFIXES)
        try:
            facts = parse_fact_document(_read(path))
        except ParseError as exc:
            raise UsageError(f"{path}: {exc}") from None
        traces.setdefault(s, []).extend(facts)
    return {s: sorted(f, key=fact_key) for s, f in traces.items()}


def cmd_federate(args) -> int:
    from .federation import PlanError, SubscriptionError, parse_topology, run_federated, run_monolithic
    from .federation import compare, trace_ticks
    from .federation.transport import NodeUnreachable

    config = _config(args)
    try:
        topology = parse_topology(_read(args.topology))
    except ValueError as exc:
        raise UsageError(f"{args.topology}: {exc}") from None
    rules = _rules(args.rules, config)
    traces = _traces(args.trace)
    owned = {s for n in topology.nodes for s in n.streams}
    for s in traces:
        if s not in owned:
            raise UsageError(f"trace stream {s.value} is not owned by any node")
    ticks = trace_ticks(traces)
    if args.ticks:
        lo, _, hi = args.ticks.partition(":")
        try:
            ticks = range(int(lo), int(hi) + 1)
        except ValueError:
            raise UsageError(f"--ticks expects first:last, got {args.ticks!r}") from None

    mono = run_monolithic(rules, traces, ticks)
    try:
        fed = run_federated(topology, rules, traces, ticks, attempts=args.attempts)
    except NodeUnreachable as exc:
        return _error(f"node unreachable: {exc}", EXIT_UNREACHABLE)
    except PlanError as exc:
        raise UsageError(str(exc)) from None
    except SubscriptionError as exc:
        return _error(f"subscription rejected: {exc}", EXIT_FAIL)

    diff = compare(mono, fed.outputs)
    verdict = "EQUAL" if not diff else "DIFFERENT"
    lines = [f"verdict\t{verdict}", f"ticks\t{len(ticks)}", f"plans\t{len(fed.plans)}",
             f"fragments\t{sum(len(p.subqueries) for p in fed.plans)}"]
    lines += [f"audit\t{k}\t{v}" for k, v in sorted(fed.audit.items())]
    lines += [f"differs\t{t}" for t in diff]
    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for node_id, rows in sorted(fed.emitted.items()):
            (out / f"{node_id}.ttl").write_text(serialize_facts(f for _, f in rows))
        (out / "monolithic.ttl").write_text(serialize_facts(f for t in ticks for f in mono[t]))
        (out / "verdict.tsv").write_text("".join(line + "\n" for line in lines))
    _write(None, "".join(line + "\n" for line in lines))
    for e in fed.errors:
        print(f"warning: {e}", file=sys.stderr)
    return EXIT_OK if verdict == "EQUAL" else EXIT_FAIL


# config --------------------------------------------------------------------------

def cmd_config(args) -> int:
    _write(None, (EngineConfig() if args.defaults else _config(args)).dumps())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="streamfusion", description="Rule-driven stream fusion and tracking.")
    p.add_argument("-v", "--verbose", action="store_true", help="log debug output to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp):
        sp.add_argument("--config", help="key=value config file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
        return sp

    sp = with_config(sub.add_parser("parse", help="parse rules, print normalized form and analysis"))
    sp.add_argument("rules")
    sp.add_argument("--ast", action="store_true", help="dump the syntax tree instead")
    sp.set_defaults(func=cmd_parse)

    sp = with_config(sub.add_parser("run", help="track detections through the rule pipeline"))
    sp.add_argument("detections", help="CSV rows frame,x,y,w,h,score,label[,appearance_id]")
    sp.add_argument("--rules", help="rule file (default: bundled tracking rules)")
    sp.add_argument("--weights", help="soft-rule weights TSV")
    sp.add_argument("--tracks", help="MOT CSV output (default: stdout)")
    sp.add_argument("--output", help="Turtle-star output stream")
    sp.add_argument("--explain", help="explanation log TSV")
    sp.add_argument("--emit-predictions", action=argparse.BooleanOptionalAction, default=None,
                    help="write predicted boxes for missed tracks")
    sp.add_argument("--strict", action="store_true", help="fail on any evaluation error")
    sp.set_defaults(func=cmd_run)

    sp = with_config(sub.add_parser("train", help="learn soft-rule weights from labeled ticks"))
    sp.add_argument("samples")
    sp.add_argument("--rules", help="rule file whose soft rules get weights")
    sp.add_argument("--init", help="initial weights TSV (default: all 1)")
    sp.add_argument("--lr", type=float, default=0.1)
    sp.add_argument("--epochs", type=int, default=50)
    sp.add_argument("--features", choices=["confidence", "count"], default="confidence")
    sp.add_argument("--out", help="weights TSV output (default: stdout)")
    sp.add_argument("--report", help="training report output")
    sp.set_defaults(func=cmd_train)

    sp = with_config(sub.add_parser("federate", help="run rules federated and monolithically, compare"))
    sp.add_argument("topology")
    sp.add_argument("rules")
    sp.add_argument("--trace", action="append", metavar="STREAM=FILE", help="facts for one stream")
    sp.add_argument("--ticks", metavar="FIRST:LAST", help="tick range (default: span of the traces)")
    sp.add_argument("--out-dir", help="directory for per-node outputs and the verdict")
    sp.add_argument("--attempts", type=int, default=5, help="connection attempts per node")
    sp.set_defaults(func=cmd_federate)

    sp = with_config(sub.add_parser("config", help="print the effective configuration"))
    sp.add_argument("--defaults", action="store_true", help="print built-in defaults")
    sp.set_defaults(func=cmd_config)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        if exc.code:
            print("error: invalid command line", file=sys.stderr)
        return exc.code
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="warning: %(message)s",
                        stream=sys.stderr, force=True)
    try:
        return args.func(args)
    except UsageError as exc:
        return _error(exc, EXIT_PARSE)
    except BrokenPipeError:
        return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
