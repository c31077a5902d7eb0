"""Shared fixtures and randomized generators for the test suite."""

from __future__ import annotations

import random
import struct

import pytest

import nestcol as nc

FIELD_POOL = ["a", "b", "c", "d", "pt", "eta", "phi", "n"]
DTYPES = [nc.Dtype.BOOL, nc.Dtype.INT64, nc.Dtype.FLOAT64, nc.Dtype.UINT8]


def random_schema(rng: random.Random, depth: int = 0, max_depth: int = 4) -> nc.Schema:
    """A random schema tree: depth <= max_depth, <= 4 record fields,
    <= 3 union alternatives."""
    if depth >= max_depth:
        kind = "primitive"
    else:
        kind = rng.choices(
            ["primitive", "list", "union", "record"],
            weights=[4, 3, 2, 3],
        )[0]
    if kind == "primitive":
        return nc.Primitive(rng.choice(DTYPES))
    if kind == "list":
        return nc.List(random_schema(rng, depth + 1, max_depth))
    if kind == "union":
        n = rng.randint(2, 3)
        return nc.Union([random_schema(rng, depth + 1, max_depth) for _ in range(n)])
    n = rng.randint(1, 4)
    names = rng.sample(FIELD_POOL, n)
    return nc.Record({f: random_schema(rng, depth + 1, max_depth) for f in names})


def random_float(rng: random.Random) -> float:
    r = rng.random()
    if r < 0.05:
        return rng.choice([0.0, -0.0, 1.0, -1.0, 1e-300, 1e300])
    return rng.uniform(-1e6, 1e6)


def random_value(rng: random.Random, schema: nc.Schema, max_list: int = 8):
    if isinstance(schema, nc.Primitive):
        if schema.dtype is nc.Dtype.BOOL:
            return rng.random() < 0.5
        if schema.dtype is nc.Dtype.INT64:
            return rng.randint(-(2**40), 2**40)
        if schema.dtype is nc.Dtype.UINT8:
            return rng.randint(0, 255)
        return random_float(rng)
    if isinstance(schema, nc.List):
        n = rng.randint(0, max_list)
        # bias long lists down so deep nests stay small
        if n > 3 and rng.random() < 0.6:
            n = rng.randint(0, 3)
        return [random_value(rng, schema.item, max_list) for _ in range(n)]
    if isinstance(schema, nc.Union):
        tag = rng.randrange(len(schema.alternatives))
        return nc.UnionValue(tag, random_value(rng, schema.alternatives[tag], max_list))
    return {f: random_value(rng, sub, max_list) for f, sub in schema.fields.items()}


def bits(x: float) -> bytes:
    return struct.pack("<d", x)


def values_equal_bits(a, b) -> bool:
    """Equality that distinguishes float bit patterns (0.0 vs -0.0)."""
    if isinstance(a, bool) or isinstance(b, bool):
        return type(a) is type(b) and a == b
    if isinstance(a, float) or isinstance(b, float):
        return type(a) is type(b) and bits(a) == bits(b)
    if isinstance(a, int):
        return type(a) is type(b) and a == b
    if isinstance(a, list):
        return (
            isinstance(b, list)
            and len(a) == len(b)
            and all(values_equal_bits(x, y) for x, y in zip(a, b))
        )
    if isinstance(a, nc.UnionValue):
        return isinstance(b, nc.UnionValue) and a.tag == b.tag and values_equal_bits(a.value, b.value)
    if isinstance(a, dict):
        return (
            isinstance(b, dict)
            and set(a) == set(b)
            and all(values_equal_bits(a[k], b[k]) for k in a)
        )
    return False


def sinks_equal_bits(a: list, b: list) -> bool:
    return len(a) == len(b) and all(values_equal_bits(x, y) for x, y in zip(a, b))


def desk_events():
    return [
        {"muons": [{"pt": 1.0, "eta": 0.5, "phi": 0.1}, {"pt": 2.0, "eta": -0.5, "phi": 0.2}]},
        {"muons": []},
    ]


def build_dataset(events, instrumented: bool = False) -> nc.ColumnStore:
    store = nc.encode_all([events], nc.DATASET_SCHEMA, nc.DATASET_PREFIX)
    store.instrumented = instrumented
    return store


@pytest.fixture
def desk_store() -> nc.ColumnStore:
    return build_dataset(desk_events())


def run_both(source: str, store: nc.ColumnStore, schema=None, prefix=None, options=None):
    """Compile+run columnar and interpret materialized; return both sinks."""
    schema = schema or nc.DATASET_SCHEMA
    prefix = prefix or nc.DATASET_PREFIX
    options = options or nc.Options()
    plan = nc.compile_query(source, schema, prefix, options)
    sink_c, _ = nc.run_columnar(plan, store)
    sink_m, _ = nc.run_materialized(source, store, schema, prefix, options)
    return sink_c.values, sink_m.values
