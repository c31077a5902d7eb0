"""Timing harness comparing columnar and materialized execution.

Timing covers query execution only: stores are loaded and columns pulled
into element form before the clock starts, and compilation is not timed.
Before any timing, the selected engine's output is checked element-for-
element against the other engine unless verification is disabled.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

from .codec import ColumnStore
from .engine import Sink, run_columnar, run_materialized
from .errors import NestcolError
from .queries import BUILTIN_QUERIES, DATASET_PREFIX, DATASET_SCHEMA
from .schema import Schema
from .transform import Options, compile_query

ENGINES = ("columnar", "columnar-unchecked", "materialized")


@dataclass
class BenchResult:
    query: str
    engine: str
    events: int
    seconds: float
    sink: list
    verified: bool
    read_counts: dict[str, int] | None = None

    @property
    def events_per_second(self) -> float:
        return self.events / self.seconds if self.seconds > 0 else float("inf")


def _options_for(engine: str, optimize: bool = True) -> Options:
    if engine == "columnar-unchecked":
        return Options(range_checks=False, eliminate_zero_lookups=optimize, flatten_loops=optimize)
    return Options(eliminate_zero_lookups=optimize, flatten_loops=optimize)


def resolve_query(query: str) -> tuple[str, str]:
    """Accept a builtin query id or raw PQ source; return (name, source)."""
    if query in BUILTIN_QUERIES:
        return query, BUILTIN_QUERIES[query]
    if "def " in query:
        return "<inline>", query
    raise NestcolError(f"unknown query {query!r}; builtins: {', '.join(sorted(BUILTIN_QUERIES))}")


def bench(
    query: str,
    engine: str,
    store: ColumnStore,
    dataset_schema: Schema = DATASET_SCHEMA,
    prefix: str = DATASET_PREFIX,
    verify: bool = True,
    read_counts: bool = False,
    optimize: bool = True,
) -> BenchResult:
    """Run one query on one engine and report its event rate.

    ``verify`` cross-checks the sink against the other execution strategy
    first; ``read_counts`` adds an untimed instrumented run.
    """
    if engine not in ENGINES:
        raise NestcolError(f"unknown engine {engine!r}; choose from {', '.join(ENGINES)}")
    name, source = resolve_query(query)
    options = _options_for(engine, optimize)
    plan = None
    if engine.startswith("columnar"):
        plan = compile_query(source, dataset_schema, prefix, options)
        columns = plan.referenced_columns
    else:
        columns = store.names()

    was_instrumented = store.instrumented
    store.instrumented = False
    try:
        for column in sorted(columns):
            store.sequence(column)  # pull into element form before the clock

        if engine.startswith("columnar"):
            sink, report = run_columnar(plan, store)
        else:
            sink, report = run_materialized(source, store, dataset_schema, prefix, options)

        verified = False
        if verify:
            if engine.startswith("columnar"):
                other, _ = run_materialized(source, store, dataset_schema, prefix, options)
            else:
                other, _ = run_columnar(
                    compile_query(source, dataset_schema, prefix, Options()), store
                )
            if other.values != sink.values:
                raise NestcolError(
                    f"engines disagree on {name}: {len(sink.values)} vs {len(other.values)} values"
                )
            verified = True

        counts = None
        if read_counts:
            store.instrumented = True
            store.reset_counts()
            if engine.startswith("columnar"):
                run_columnar(plan, store)
            else:
                run_materialized(source, store, dataset_schema, prefix, options)
            counts = {k: v for k, v in store.read_counts.items() if v}
    finally:
        store.instrumented = was_instrumented

    return BenchResult(
        query=name,
        engine=engine,
        events=report.events,
        seconds=report.seconds,
        sink=sink.values,
        verified=verified,
        read_counts=counts,
    )
