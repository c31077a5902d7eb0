"""Columnar engine for hierarchically nested data.

Typed object trees map losslessly to flat named arrays, and procedural
queries compile into integer array indexing that runs directly on the
columns; a materializing interpreter provides the reference semantics.
"""

from .bench import BenchResult, bench
from .codec import (
    ColumnStore,
    DecodeCursor,
    UnionValue,
    ValidationReport,
    decode,
    decode_all,
    decode_at,
    encode,
    encode_all,
    navigate,
    new_store,
    random_access,
    union_offsets,
    validate,
)
from .datagen import generate
from .engine import RunReport, Sink, run_columnar, run_materialized, selective_read_profile
from .errors import (
    CompileError,
    InvalidSchema,
    MalformedArrays,
    MalformedNames,
    MissingColumn,
    NestcolError,
    ParseError,
    PathError,
    QueryRuntimeError,
    RangeError,
    StoreError,
    TagOutOfRange,
    TypeMismatch,
)
from .plan import TypedPlan, render_plan
from .queries import BUILTIN_QUERIES, DATASET_PREFIX, DATASET_SCHEMA, EVENT_SCHEMA, MUON_SCHEMA
from .query import parse
from .schema import (
    ColumnName,
    ColumnRole,
    Dtype,
    List,
    Primitive,
    Record,
    RoleKind,
    Schema,
    Union,
    accepts,
    columns_for,
    schema_from_json,
    schema_from_names,
    schema_to_json,
)
from .storage import json_to_value, load_store, save_store, value_to_json
from .transform import (
    Options,
    SymbolTable,
    compile_query,
    eliminate_zero_lookups,
    explain,
    flatten_loops,
)

__version__ = "0.1.0"
