"""Lossless translation between object trees and flat named arrays.

The encoder appends one value at a time into per-column builders; the
decoder walks the arrays back into plain Python objects (lists, dicts,
scalars, tagged union wrappers). Decoding is the materialization path the
columnar engine avoids, and doubles as the ground-truth oracle for it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    MalformedArrays,
    MissingColumn,
    PathError,
    RangeError,
    StoreError,
    TagOutOfRange,
    TypeMismatch,
)
from .schema import (
    TOK_LIST_DATA,
    TOK_LIST_OFFSET,
    TOK_RECORD_FIELD,
    TOK_UNION_DATA,
    TOK_UNION_OFFSET,
    TOK_UNION_TAG,
    ColumnRole,
    Dtype,
    List,
    Primitive,
    Record,
    RoleKind,
    Schema,
    Union,
    columns_for,
)

INT64_MIN = -(2**63)
INT64_MAX = 2**63 - 1


@dataclass(frozen=True)
class UnionValue:
    """A union instance: which alternative it is, and its payload.

    ``nickname`` is presentation metadata filled in by the decoder when the
    schema names its alternatives; it never affects equality.
    """

    tag: int
    value: Any
    nickname: str | None = field(default=None, compare=False)


class _CountingColumn:
    """Sequence view over a column that counts element reads."""

    __slots__ = ("_data", "_counts", "_name")

    def __init__(self, data, counts, name):
        self._data = data
        self._counts = counts
        self._name = name

    def __getitem__(self, i):
        self._counts[self._name] += 1
        return self._data[i]

    def __len__(self):
        return len(self._data)


class ColumnStore:
    """Named flat arrays plus per-column read counters.

    A store is mutable while values are being encoded into it and immutable
    after ``freeze()`` (loading from disk produces frozen stores). Readers
    may share a frozen store; counter updates ride on the GIL and never
    block reads.
    """

    def __init__(self, instrumented: bool = False):
        self._columns: dict[str, Any] = {}
        self._dtypes: dict[str, Dtype] = {}
        self._roles: dict[str, ColumnRole] = {}
        self._schemas: dict[str, Schema] = {}
        self._frozen = False
        self._seqs: dict[str, Any] = {}
        self.instrumented = instrumented
        self.read_counts: dict[str, int] = {}

    @classmethod
    def from_arrays(
        cls,
        arrays: Mapping[str, np.ndarray],
        dtypes: Mapping[str, Dtype] | None = None,
        instrumented: bool = False,
    ) -> "ColumnStore":
        store = cls(instrumented=instrumented)
        for name, arr in arrays.items():
            dt = dtypes[name] if dtypes else Dtype(str(np.asarray(arr).dtype))
            store._columns[name] = np.asarray(arr, dtype=dt.to_numpy())
            store._dtypes[name] = dt
            store.read_counts[name] = 0
        store._frozen = True
        return store

    @property
    def frozen(self) -> bool:
        return self._frozen

    def names(self) -> list[str]:
        return sorted(self._columns)

    def __contains__(self, name: str) -> bool:
        return name in self._columns

    def schema_for(self, prefix: str) -> Schema | None:
        return self._schemas.get(prefix)

    def seed(self, schema: Schema, prefix: str) -> None:
        """Create every column ``schema`` occupies under ``prefix``, empty.

        List-offset columns start life holding the single element 0. Reusing
        a prefix with a different schema is rejected rather than merged.
        """
        if self._frozen:
            raise StoreError("store is frozen")
        existing = self._schemas.get(prefix)
        if existing is not None:
            if existing != schema:
                raise StoreError(f"prefix {prefix!r} already seeded with a different schema")
            return
        for other in self._schemas:
            if other == prefix or other.startswith(prefix + "-") or prefix.startswith(other + "-"):
                raise StoreError(f"prefix {prefix!r} collides with existing prefix {other!r}")
        for cname, role in columns_for(schema, prefix).items():
            rendered = cname.render()
            col: list = [0] if role.kind is RoleKind.LIST_OFFSET else []
            self._columns[rendered] = col
            self._dtypes[rendered] = role.dtype
            self._roles[rendered] = role
            self.read_counts[rendered] = 0
        self._schemas[prefix] = schema

    def append(self, name: str, value) -> None:
        if self._frozen:
            raise StoreError("store is frozen")
        self._columns[name].append(value)

    def freeze(self) -> "ColumnStore":
        if not self._frozen:
            for name, col in self._columns.items():
                self._columns[name] = np.asarray(col, dtype=self._dtypes[name].to_numpy())
            self._frozen = True
        return self

    def array(self, name: str) -> np.ndarray:
        """Bulk accessor (uncounted); only valid on frozen stores."""
        if not self._frozen:
            raise StoreError("store is not frozen yet")
        try:
            return self._columns[name]
        except KeyError:
            raise MissingColumn(name) from None

    def dtype(self, name: str) -> Dtype:
        try:
            return self._dtypes[name]
        except KeyError:
            raise MissingColumn(name) from None

    def length(self, name: str) -> int:
        try:
            return len(self._columns[name])
        except KeyError:
            raise MissingColumn(name) from None

    def sequence(self, name: str):
        """Element-access view of a column: a plain list, or a counting view
        for instrumented stores. Scalars come back as Python numbers."""
        if not self._frozen:
            raise StoreError("store is not frozen yet")
        seq = self._seqs.get(name)
        if seq is None:
            try:
                seq = self._columns[name].tolist()
            except KeyError:
                raise MissingColumn(name) from None
            self._seqs[name] = seq
        if self.instrumented:
            return _CountingColumn(seq, self.read_counts, name)
        return seq

    def read(self, name: str, index: int):
        """Read one element, honoring instrumentation and bounds."""
        seq = self.sequence(name)
        if index < 0 or index >= len(seq):
            raise MalformedArrays(f"index {index} beyond column {name!r} (length {len(seq)})")
        return seq[index]

    def reset_counts(self) -> None:
        for name in self.read_counts:
            self.read_counts[name] = 0

    def touched_columns(self) -> set[str]:
        return {n for n, c in self.read_counts.items() if c > 0}


class DecodeCursor:
    """Per-column positions for sequential decoding."""

    def __init__(self):
        self.positions: dict[str, int] = {}

    def pos(self, name: str) -> int:
        return self.positions.get(name, 0)

    def advance(self, name: str, by: int = 1) -> None:
        self.positions[name] = self.positions.get(name, 0) + by


def new_store(schema: Schema, prefix: str, store: ColumnStore | None = None) -> ColumnStore:
    """A store (or an existing one) seeded with every column for ``schema``."""
    if store is None:
        store = ColumnStore()
    store.seed(schema, prefix)
    return store


def encode(value, schema: Schema, prefix: str, store: ColumnStore) -> ColumnStore:
    """Append one value conforming to ``schema`` into ``store``.

    Encoding a sequence of values one by one appends them in order;
    decoding then reproduces exactly that sequence.
    """
    if store.schema_for(prefix) is None:
        store.seed(schema, prefix)
    elif store.schema_for(prefix) != schema:
        raise StoreError(f"prefix {prefix!r} already seeded with a different schema")
    _encode(value, schema, prefix, store)
    return store


def encode_all(values: Iterable, schema: Schema, prefix: str, store: ColumnStore | None = None) -> ColumnStore:
    """Encode a sequence of values and freeze the result."""
    store = new_store(schema, prefix, store)
    for v in values:
        _encode(v, schema, prefix, store)
    return store.freeze()


def _encode(value, schema: Schema, name: str, store: ColumnStore) -> None:
    if isinstance(schema, Primitive):
        store.append(name, _conform_primitive(value, schema.dtype, name))
    elif isinstance(schema, List):
        if not isinstance(value, (list, tuple)):
            raise TypeMismatch(f"{name}: expected a list, got {type(value).__name__}")
        off = name + "-" + TOK_LIST_OFFSET
        last = store._columns[off][-1]
        store.append(off, last + len(value))
        item_name = name + "-" + TOK_LIST_DATA
        for item in value:
            _encode(item, schema.item, item_name, store)
    elif isinstance(schema, Union):
        if not isinstance(value, UnionValue):
            raise TypeMismatch(f"{name}: expected a tagged union value, got {type(value).__name__}")
        n = len(schema.alternatives)
        if not 0 <= value.tag < n:
            raise TypeMismatch(f"{name}: union tag {value.tag} out of range [0, {n})")
        tag_col = name + "-" + TOK_UNION_TAG
        off_col = name + "-" + TOK_UNION_OFFSET
        # The offset is this tag's occurrence count so far; keeping it during
        # encoding matches deriving it from the tags afterwards.
        data_name = f"{name}-{TOK_UNION_DATA}{value.tag}"
        occurrences = _unit_count(schema.alternatives[value.tag], data_name, store)
        store.append(tag_col, value.tag)
        store.append(off_col, occurrences)
        _encode(value.value, schema.alternatives[value.tag], data_name, store)
    elif isinstance(schema, Record):
        if not isinstance(value, Mapping):
            raise TypeMismatch(f"{name}: expected a record mapping, got {type(value).__name__}")
        if set(value.keys()) != set(schema.fields.keys()):
            raise TypeMismatch(
                f"{name}: record fields {sorted(value.keys())} != schema fields "
                f"{sorted(schema.fields.keys())}"
            )
        for field, sub in schema.fields.items():
            _encode(value[field], sub, f"{name}-{TOK_RECORD_FIELD}{field}", store)
    else:
        raise TypeMismatch(f"not a schema node: {schema!r}")


def _conform_primitive(value, dtype: Dtype, name: str):
    if dtype is Dtype.BOOL:
        if isinstance(value, (bool, np.bool_)):
            return bool(value)
    elif dtype is Dtype.INT64:
        if isinstance(value, (int, np.integer)) and not isinstance(value, (bool, np.bool_)):
            v = int(value)
            if INT64_MIN <= v <= INT64_MAX:
                return v
            raise TypeMismatch(f"{name}: {v} does not fit in int64")
    elif dtype is Dtype.UINT8:
        if isinstance(value, (int, np.integer)) and not isinstance(value, (bool, np.bool_)):
            v = int(value)
            if 0 <= v <= 255:
                return v
            raise TypeMismatch(f"{name}: {v} does not fit in uint8")
    elif dtype is Dtype.FLOAT64:
        if isinstance(value, (int, float, np.integer, np.floating)) and not isinstance(
            value, (bool, np.bool_)
        ):
            return float(value)
    raise TypeMismatch(f"{name}: {value!r} does not conform to {dtype}")


def _unit_count(schema: Schema, name: str, store: ColumnStore) -> int:
    """How many values have been encoded at this node so far."""
    if isinstance(schema, Primitive):
        return store.length(name)
    if isinstance(schema, List):
        return store.length(name + "-" + TOK_LIST_OFFSET) - 1
    if isinstance(schema, Union):
        return store.length(name + "-" + TOK_UNION_TAG)
    if isinstance(schema, Record):
        field, sub = next(iter(schema.fields.items()))
        return _unit_count(sub, f"{name}-{TOK_RECORD_FIELD}{field}", store)
    raise TypeMismatch(f"not a schema node: {schema!r}")


def decode(store: ColumnStore, schema: Schema, prefix: str, cursor: DecodeCursor):
    """Decode the next value in sequence, advancing ``cursor``."""
    if isinstance(schema, Primitive):
        v = store.read(prefix, cursor.pos(prefix))
        cursor.advance(prefix)
        return v
    if isinstance(schema, List):
        off = prefix + "-" + TOK_LIST_OFFSET
        p = cursor.pos(off)
        start = store.read(off, p)
        stop = store.read(off, p + 1)
        cursor.advance(off)
        length = stop - start
        if length < 0:
            raise MalformedArrays(f"{off}: negative list length at {p}")
        item_name = prefix + "-" + TOK_LIST_DATA
        return [decode(store, schema.item, item_name, cursor) for _ in range(length)]
    if isinstance(schema, Union):
        tag_col = prefix + "-" + TOK_UNION_TAG
        tag = store.read(tag_col, cursor.pos(tag_col))
        cursor.advance(tag_col)
        off_col = prefix + "-" + TOK_UNION_OFFSET
        if off_col in store:
            cursor.advance(off_col)
        if not 0 <= tag < len(schema.alternatives):
            raise MalformedArrays(f"{tag_col}: tag {tag} out of range")
        payload = decode(store, schema.alternatives[tag], f"{prefix}-{TOK_UNION_DATA}{tag}", cursor)
        nick = schema.nicknames[tag] if schema.nicknames else None
        return UnionValue(int(tag), payload, nick)
    if isinstance(schema, Record):
        return {
            field: decode(store, sub, f"{prefix}-{TOK_RECORD_FIELD}{field}", cursor)
            for field, sub in schema.fields.items()
        }
    raise MalformedArrays(f"not a schema node: {schema!r}")


def top_count(store: ColumnStore, schema: Schema, prefix: str) -> int:
    """How many top-level values the store holds under ``prefix``."""
    if isinstance(schema, Primitive):
        return store.length(prefix)
    if isinstance(schema, List):
        n = store.length(prefix + "-" + TOK_LIST_OFFSET) - 1
        if n < 0:
            raise MalformedArrays(f"{prefix}: empty list-offset column")
        return n
    if isinstance(schema, Union):
        return store.length(prefix + "-" + TOK_UNION_TAG)
    if isinstance(schema, Record):
        field, sub = next(iter(schema.fields.items()))
        return top_count(store, sub, f"{prefix}-{TOK_RECORD_FIELD}{field}")
    raise MalformedArrays(f"not a schema node: {schema!r}")


def decode_all(store: ColumnStore, schema: Schema, prefix: str) -> list:
    """Decode every value and require all cursors to end exactly at the end
    of their columns; anything else means the arrays are malformed."""
    cursor = DecodeCursor()
    values = [decode(store, schema, prefix, cursor) for _ in range(top_count(store, schema, prefix))]
    for cname in columns_for(schema, prefix):
        rendered = cname.render()
        expected = store.length(rendered)
        got = cursor.pos(rendered)
        if rendered.endswith("-" + TOK_LIST_OFFSET):
            got += 1  # offset columns carry the leading 0 no cursor consumes
        if got != expected:
            raise MalformedArrays(
                f"{rendered}: decode ended at {got} of {expected} elements"
            )
    return values


def decode_at(store: ColumnStore, schema: Schema, prefix: str, index: int):
    """Materialize the value at ``index`` without touching its neighbors.

    This is the random-access form of decoding: offsets say where each
    substructure starts, so one index per node suffices.
    """
    if isinstance(schema, Primitive):
        return store.read(prefix, index)
    if isinstance(schema, List):
        off = prefix + "-" + TOK_LIST_OFFSET
        start = store.read(off, index)
        stop = store.read(off, index + 1)
        if stop < start:
            raise MalformedArrays(f"{off}: negative list length at {index}")
        item_name = prefix + "-" + TOK_LIST_DATA
        return [decode_at(store, schema.item, item_name, j) for j in range(start, stop)]
    if isinstance(schema, Union):
        tag = store.read(prefix + "-" + TOK_UNION_TAG, index)
        if not 0 <= tag < len(schema.alternatives):
            raise MalformedArrays(f"{prefix}: tag {tag} out of range")
        offset = store.read(prefix + "-" + TOK_UNION_OFFSET, index)
        payload = decode_at(store, schema.alternatives[tag], f"{prefix}-{TOK_UNION_DATA}{tag}", offset)
        nick = schema.nicknames[tag] if schema.nicknames else None
        return UnionValue(int(tag), payload, nick)
    if isinstance(schema, Record):
        return {
            field: decode_at(store, sub, f"{prefix}-{TOK_RECORD_FIELD}{field}", index)
            for field, sub in schema.fields.items()
        }
    raise MalformedArrays(f"not a schema node: {schema!r}")


def union_offsets(tags, n_alternatives: int):
    """Per-alternative running occurrence counts.

    out[i] is how many earlier entries carry the same tag as tags[i]; each
    alternative's counter starts at zero.
    """
    arr = np.asarray(tags, dtype=np.int64) if len(tags) else np.zeros(0, dtype=np.int64)
    if arr.size:
        lo, hi = int(arr.min()), int(arr.max())
        if lo < 0 or hi >= n_alternatives:
            raise TagOutOfRange(f"tags must lie in [0, {n_alternatives}), saw [{lo}, {hi}]")
    out = np.zeros(arr.size, dtype=np.int64)
    for t in range(n_alternatives):
        mask = arr == t
        out[mask] = np.arange(int(mask.sum()), dtype=np.int64)
    return out


PathStep = int | str
UNION_RESOLVE = "*"


def navigate(value, path: Sequence[PathStep]):
    """Follow a path through a materialized value (the oracle for
    random_access). Unions are unwrapped implicitly when stepped through."""
    for step in path:
        while isinstance(value, UnionValue) and step != UNION_RESOLVE:
            value = value.value
        if step == UNION_RESOLVE:
            if not isinstance(value, UnionValue):
                raise PathError(f"cannot union-resolve a {type(value).__name__}")
            value = value.value
        elif isinstance(step, int):
            if not isinstance(value, list):
                raise PathError(f"cannot index a {type(value).__name__}")
            if not 0 <= step < len(value):
                raise RangeError(f"index {step} out of range [0, {len(value)})")
            value = value[step]
        else:
            if not isinstance(value, Mapping):
                raise PathError(f"cannot take field {step!r} of {type(value).__name__}")
            if step not in value:
                raise PathError(f"no such field {step!r}")
            value = value[step]
    return value


def random_access(
    store: ColumnStore,
    schema: Schema,
    prefix: str,
    path: Sequence[PathStep],
    occurrence: int = 0,
):
    """Fetch one nested value by path without decoding anything around it.

    Equivalent to decoding the whole store and navigating the same path;
    offsets are followed instead, one integer index per level.
    """
    total = top_count(store, schema, prefix)
    if not 0 <= occurrence < total:
        raise RangeError(f"occurrence {occurrence} out of range [0, {total})")
    node, name, idx = schema, prefix, occurrence
    for step in path:
        while isinstance(node, Union) and step != UNION_RESOLVE:
            node, name, idx = _resolve_union(store, node, name, idx)
        if step == UNION_RESOLVE:
            if not isinstance(node, Union):
                raise PathError(f"cannot union-resolve {node}")
            node, name, idx = _resolve_union(store, node, name, idx)
        elif isinstance(step, int):
            if not isinstance(node, List):
                raise PathError(f"cannot index into {node}")
            off = name + "-" + TOK_LIST_OFFSET
            start = store.read(off, idx)
            stop = store.read(off, idx + 1)
            if not 0 <= step < stop - start:
                raise RangeError(f"index {step} out of range [0, {stop - start})")
            node, name, idx = node.item, name + "-" + TOK_LIST_DATA, start + step
        else:
            if not isinstance(node, Record):
                raise PathError(f"cannot take field {step!r} of {node}")
            if step not in node.fields:
                raise PathError(f"no such field {step!r} in {node}")
            node, name = node.fields[step], f"{name}-{TOK_RECORD_FIELD}{step}"
    return decode_at(store, node, name, idx)


def _resolve_union(store: ColumnStore, node: Union, name: str, idx: int):
    tag = store.read(name + "-" + TOK_UNION_TAG, idx)
    if not 0 <= tag < len(node.alternatives):
        raise MalformedArrays(f"{name}: tag {tag} out of range")
    offset = store.read(name + "-" + TOK_UNION_OFFSET, idx)
    return node.alternatives[tag], f"{name}-{TOK_UNION_DATA}{tag}", offset


@dataclass
class ValidationReport:
    """Everything found wrong with a store, or nothing."""

    violations: list[str]

    @property
    def ok(self) -> bool:
        return not self.violations

    def __str__(self) -> str:
        if self.ok:
            return "OK"
        return "\n".join(self.violations)


def validate(store: ColumnStore, schema: Schema, prefix: str) -> ValidationReport:
    """Check every structural invariant and report all failures.

    Total: returns a report rather than raising. Checks offset monotonicity
    and leading zero, tag ranges, derived union offsets, cross-column length
    consistency, dtypes, and missing or unexpected columns.
    """
    out: list[str] = []
    expected_cols = {c.render(): role for c, role in columns_for(schema, prefix).items()}
    present = [
        n for n in store.names() if n == prefix or n.startswith(prefix + "-")
    ]
    for name in present:
        if name not in expected_cols:
            out.append(f"{name}: unexpected column for this schema")
    for name, role in expected_cols.items():
        if name not in store:
            out.append(f"{name}: missing column")
        elif store.dtype(name) is not role.dtype:
            out.append(f"{name}: dtype {store.dtype(name)} != expected {role.dtype}")
    _validate_node(store, schema, prefix, None, out)
    return ValidationReport(out)


def _validate_node(
    store: ColumnStore, schema: Schema, name: str, expected: int | None, out: list[str]
) -> None:
    if isinstance(schema, Primitive):
        if name in store and expected is not None and store.length(name) != expected:
            out.append(f"{name}: length {store.length(name)} != expected {expected}")
        return
    if isinstance(schema, List):
        off = name + "-" + TOK_LIST_OFFSET
        child_expected = None
        if off in store:
            arr = store.array(off)
            if arr.size == 0:
                out.append(f"{off}: offset column is empty")
            else:
                if arr[0] != 0:
                    out.append(f"{off}: first offset is {arr[0]}, not 0")
                if arr.size > 1 and np.any(np.diff(arr) < 0):
                    out.append(f"{off}: offsets are not monotonically nondecreasing")
                if expected is not None and arr.size != expected + 1:
                    out.append(f"{off}: {arr.size} offsets != expected {expected + 1}")
                child_expected = int(arr[-1])
        _validate_node(store, schema.item, name + "-" + TOK_LIST_DATA, child_expected, out)
        return
    if isinstance(schema, Union):
        tag_col = name + "-" + TOK_UNION_TAG
        off_col = name + "-" + TOK_UNION_OFFSET
        n = len(schema.alternatives)
        per_tag: list[int | None] = [None] * n
        if tag_col in store:
            tags = store.array(tag_col)
            if expected is not None and tags.size != expected:
                out.append(f"{tag_col}: length {tags.size} != expected {expected}")
            if tags.size and int(tags.max()) >= n:
                out.append(f"{tag_col}: tag {int(tags.max())} out of range [0, {n})")
            else:
                counts = np.bincount(tags, minlength=n) if tags.size else np.zeros(n, int)
                per_tag = [int(c) for c in counts]
                if off_col in store:
                    offs = store.array(off_col)
                    if offs.size != tags.size:
                        out.append(f"{off_col}: length {offs.size} != tag column {tags.size}")
                    elif tags.size and not np.array_equal(offs, union_offsets(tags, n)):
                        out.append(f"{off_col}: does not match offsets derived from tags")
        for t, alt in enumerate(schema.alternatives):
            _validate_node(store, alt, f"{name}-{TOK_UNION_DATA}{t}", per_tag[t], out)
        return
    if isinstance(schema, Record):
        for field, sub in schema.fields.items():
            _validate_node(store, sub, f"{name}-{TOK_RECORD_FIELD}{field}", expected, out)
        return
    out.append(f"{name}: not a schema node: {schema!r}")
