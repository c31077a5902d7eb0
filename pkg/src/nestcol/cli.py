"""Command-line interface: encode, decode, validate, run, explain,
generate, and bench over store directories."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .bench import ENGINES, bench
from .codec import decode_all, encode_all, random_access, validate
from .datagen import generate
from .engine import run_columnar, run_materialized
from .errors import CompileError, NestcolError, ParseError
from .plan import render_plan
from .schema import Schema, schema_from_json
from .storage import json_to_value, load_store, save_store, value_to_json
from .transform import Options, compile_query


def _schema_arg(text: str) -> Schema:
    path = Path(text)
    if path.is_file():
        return schema_from_json(path.read_text(encoding="utf-8"))
    return schema_from_json(text)


def _path_steps(text: str) -> list:
    steps: list = []
    for part in text.split("."):
        if part == "*":
            steps.append("*")
        elif part.lstrip("-").isdigit():
            steps.append(int(part))
        elif part:
            steps.append(part)
    return steps


def _options_from(args) -> Options:
    optimize = not args.no_optimize
    return Options(
        range_checks=not args.no_range_checks,
        eliminate_zero_lookups=optimize,
        flatten_loops=optimize,
    )


def cmd_encode(args) -> int:
    schema = _schema_arg(args.schema)
    obj = json.loads(Path(args.values_file).read_text(encoding="utf-8"))
    value = json_to_value(obj, schema)
    store = encode_all([value], schema, args.prefix)
    report = validate(store, schema, args.prefix)
    if not report.ok:
        print(report, file=sys.stderr)
        return 1
    save_store(store, args.out_dir, schema, args.prefix)
    print(f"encoded 1 value into {len(store.names())} columns at {args.out_dir}")
    return 0


def cmd_decode(args) -> int:
    store, schema, prefix = load_store(args.dir)
    if args.path:
        value = random_access(store, schema, prefix, _path_steps(args.path))
        print(json.dumps(value_to_json(value)))
    else:
        values = decode_all(store, schema, prefix)
        print(json.dumps([value_to_json(v) for v in values]))
    return 0


def cmd_validate(args) -> int:
    store, schema, prefix = load_store(args.dir)
    report = validate(store, schema, prefix)
    print(report)
    return 0 if report.ok else 1


def cmd_run(args) -> int:
    store, schema, prefix = load_store(args.dir)
    source = Path(args.query).read_text(encoding="utf-8")
    options = _options_from(args)
    if args.engine == "columnar":
        try:
            plan = compile_query(source, schema, prefix, options)
        except CompileError as exc:
            print(f"compile error: {exc}", file=sys.stderr)
            print("hint: --engine materialized interprets over decoded objects", file=sys.stderr)
            return 2
        sink, report = run_columnar(plan, store)
    else:
        sink, report = run_materialized(source, store, schema, prefix, options)
    sys.stdout.write(sink.serialize())
    print(
        f"# {report.events} events, {len(sink.values)} values, "
        f"{report.events_per_second:,.0f} events/s",
        file=sys.stderr,
    )
    return 0


def cmd_explain(args) -> int:
    schema = _schema_arg(args.schema)
    source = Path(args.query).read_text(encoding="utf-8")
    plan = compile_query(source, schema, args.prefix, _options_from(args))
    sys.stdout.write(render_plan(plan))
    return 0


def cmd_generate(args) -> int:
    store = generate(args.events, args.seed, mean_muons=args.mean_muons)
    from .queries import DATASET_PREFIX, DATASET_SCHEMA

    save_store(store, args.dir, DATASET_SCHEMA, DATASET_PREFIX)
    print(f"wrote {args.events} events to {args.dir}")
    return 0


def cmd_bench(args) -> int:
    store, schema, prefix = load_store(args.dir)
    result = bench(
        args.query,
        args.engine,
        store,
        schema,
        prefix,
        verify=not args.no_verify,
        read_counts=not args.no_read_counts,
    )
    check = "verified against the other engine" if result.verified else "unverified"
    print(f"query {result.query} on {result.engine}: {check}")
    print(
        f"{result.events} events in {result.seconds:.3f} s = "
        f"{result.events_per_second:,.0f} events/s ({len(result.sink)} values)"
    )
    if result.read_counts is not None:
        print("element reads per column:")
        for name in sorted(result.read_counts):
            print(f"  {name}: {result.read_counts[name]}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nestcol",
        description="Columnar engine for nested data with query compilation to array indexing.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("encode", help="encode a JSON value into a store directory")
    p.add_argument("values_file")
    p.add_argument("schema", help="schema JSON (inline or a file path)")
    p.add_argument("out_dir")
    p.add_argument("--prefix", default="x")
    p.set_defaults(fn=cmd_encode)

    p = sub.add_parser("decode", help="decode a store back into JSON")
    p.add_argument("dir")
    p.add_argument("--path", help="dotted path, e.g. 0.muons.1.pt ('*' resolves a union)")
    p.set_defaults(fn=cmd_decode)

    p = sub.add_parser("validate", help="check every structural invariant of a store")
    p.add_argument("dir")
    p.set_defaults(fn=cmd_validate)

    p = sub.add_parser("run", help="run a query over a store")
    p.add_argument("query", help="PQ source file")
    p.add_argument("dir")
    p.add_argument("--engine", choices=("columnar", "materialized"), default="columnar")
    p.add_argument("--no-range-checks", action="store_true")
    p.add_argument("--no-optimize", action="store_true")
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("explain", help="print the compiled plan of a query")
    p.add_argument("query", help="PQ source file")
    p.add_argument("schema", help="dataset schema JSON (inline or a file path)")
    p.add_argument("--prefix", default="event")
    p.add_argument("--no-range-checks", action="store_true")
    p.add_argument("--no-optimize", action="store_true")
    p.set_defaults(fn=cmd_explain)

    p = sub.add_parser("generate", help="write a synthetic event dataset")
    p.add_argument("dir")
    p.add_argument("--events", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mean-muons", type=float, default=2.0)
    p.set_defaults(fn=cmd_generate)

    p = sub.add_parser("bench", help="time a query on one engine")
    p.add_argument("dir")
    p.add_argument("--query", required=True)
    p.add_argument("--engine", choices=ENGINES, default="columnar")
    p.add_argument("--no-verify", action="store_true")
    p.add_argument("--no-read-counts", action="store_true")
    p.set_defaults(fn=cmd_bench)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (NestcolError, ParseError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
