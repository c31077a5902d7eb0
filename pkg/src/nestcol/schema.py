"""Schema trees for nested data and the column naming convention.

A schema is a finite tree built from four constructors: Primitive leaves,
variable-length Lists, tagged Unions, and Records with named fields. Any
value conforming to a schema can be stored as flat named arrays, and the
tree structure is recoverable from the array names alone (primitive dtypes
travel separately, e.g. in a store manifest).
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from typing import Iterable, Mapping, Union as TyUnion

import numpy as np

from .errors import InvalidSchema, MalformedNames

DELIMITER = "-"


class Dtype(enum.Enum):
    """Primitive storage types."""

    BOOL = "bool"
    INT64 = "int64"
    FLOAT64 = "float64"
    UINT8 = "uint8"

    def __str__(self) -> str:
        return self.value

    def to_numpy(self) -> np.dtype:
        return _NUMPY_DTYPES[self]

    @property
    def width(self) -> int:
        return self.to_numpy().itemsize

    @classmethod
    def from_name(cls, name: str) -> "Dtype":
        try:
            return cls(name)
        except ValueError:
            raise InvalidSchema(f"unknown dtype {name!r}") from None


_NUMPY_DTYPES = {
    Dtype.BOOL: np.dtype(np.bool_),
    Dtype.INT64: np.dtype(np.int64),
    Dtype.FLOAT64: np.dtype(np.float64),
    Dtype.UINT8: np.dtype(np.uint8),
}

# Storage dtypes for structural columns: offsets are wide for large lists,
# tags are narrow because unions have few alternatives.
OFFSET_DTYPE = Dtype.INT64
TAG_DTYPE = Dtype.UINT8


class Schema:
    """Base class for schema tree nodes. Nodes are immutable after construction."""

    __slots__ = ()

    def __str__(self) -> str:
        raise NotImplementedError


class Primitive(Schema):
    __slots__ = ("dtype",)

    def __init__(self, dtype: Dtype):
        if not isinstance(dtype, Dtype):
            raise InvalidSchema(f"not a primitive dtype: {dtype!r}")
        object.__setattr__(self, "dtype", dtype)

    def __setattr__(self, name, value):
        raise AttributeError("Primitive is immutable")

    def __eq__(self, other):
        return isinstance(other, Primitive) and self.dtype is other.dtype

    def __hash__(self):
        return hash(("P", self.dtype))

    def __repr__(self):
        return f"Primitive({self.dtype})"

    def __str__(self):
        return str(self.dtype)


class List(Schema):
    __slots__ = ("item",)

    def __init__(self, item: Schema):
        if not isinstance(item, Schema):
            raise InvalidSchema(f"List item is not a schema: {item!r}")
        object.__setattr__(self, "item", item)

    def __setattr__(self, name, value):
        raise AttributeError("List is immutable")

    def __eq__(self, other):
        return isinstance(other, List) and self.item == other.item

    def __hash__(self):
        return hash(("L", self.item))

    def __repr__(self):
        return f"List({self.item!r})"

    def __str__(self):
        return f"List<{self.item}>"


class Union(Schema):
    """A tagged choice between at least two alternative schemas.

    ``nicknames`` optionally labels alternatives for type checks in queries;
    nicknames are metadata and do not participate in structural equality or
    in the column naming convention.
    """

    __slots__ = ("alternatives", "nicknames")

    def __init__(self, alternatives: Iterable[Schema], nicknames: Iterable[str] | None = None):
        alts = tuple(alternatives)
        if len(alts) < 2:
            raise InvalidSchema("Union needs at least 2 alternatives")
        for alt in alts:
            if not isinstance(alt, Schema):
                raise InvalidSchema(f"Union alternative is not a schema: {alt!r}")
        nicks = tuple(nicknames) if nicknames is not None else None
        if nicks is not None:
            if len(nicks) != len(alts):
                raise InvalidSchema("one nickname per alternative required")
            if len(set(nicks)) != len(nicks):
                raise InvalidSchema("union nicknames must be distinct")
        object.__setattr__(self, "alternatives", alts)
        object.__setattr__(self, "nicknames", nicks)

    def __setattr__(self, name, value):
        raise AttributeError("Union is immutable")

    def tag_of_nickname(self, name: str) -> int | None:
        if self.nicknames is None:
            return None
        try:
            return self.nicknames.index(name)
        except ValueError:
            return None

    def __eq__(self, other):
        return isinstance(other, Union) and self.alternatives == other.alternatives

    def __hash__(self):
        return hash(("U", self.alternatives))

    def __repr__(self):
        return f"Union({self.alternatives!r})"

    def __str__(self):
        if self.nicknames:
            parts = [f"{n}: {a}" for n, a in zip(self.nicknames, self.alternatives)]
        else:
            parts = [str(a) for a in self.alternatives]
        return f"Union<{', '.join(parts)}>"


class Record(Schema):
    """A product of named fields. Field names must not contain the delimiter."""

    __slots__ = ("fields",)

    def __init__(self, fields: Mapping[str, Schema]):
        flds = dict(fields)
        if not flds:
            raise InvalidSchema("Record needs at least one field")
        for name, sub in flds.items():
            if not isinstance(name, str) or not name:
                raise InvalidSchema(f"bad record field name: {name!r}")
            if DELIMITER in name:
                raise InvalidSchema(f"record field name {name!r} contains {DELIMITER!r}")
            if not isinstance(sub, Schema):
                raise InvalidSchema(f"field {name!r} is not a schema: {sub!r}")
        object.__setattr__(self, "fields", flds)

    def __setattr__(self, name, value):
        raise AttributeError("Record is immutable")

    def __eq__(self, other):
        # Field order is presentation only; the stored layout is identical.
        return isinstance(other, Record) and self.fields == other.fields

    def __hash__(self):
        return hash(("R", frozenset(self.fields.items())))

    def __repr__(self):
        return f"Record({self.fields!r})"

    def __str__(self):
        inner = ", ".join(f"{n}: {s}" for n, s in self.fields.items())
        return f"Record{{{inner}}}"


class RoleKind(enum.Enum):
    DATA = "primitive-data"
    LIST_OFFSET = "list-offset"
    UNION_TAG = "union-tag"
    UNION_OFFSET = "union-offset"


@dataclass(frozen=True)
class ColumnRole:
    """What a column stores, and the dtype of its array."""

    kind: RoleKind
    dtype: Dtype

    @classmethod
    def data(cls, dtype: Dtype) -> "ColumnRole":
        return cls(RoleKind.DATA, dtype)

    @classmethod
    def list_offset(cls) -> "ColumnRole":
        return cls(RoleKind.LIST_OFFSET, OFFSET_DTYPE)

    @classmethod
    def union_tag(cls) -> "ColumnRole":
        return cls(RoleKind.UNION_TAG, TAG_DTYPE)

    @classmethod
    def union_offset(cls) -> "ColumnRole":
        return cls(RoleKind.UNION_OFFSET, OFFSET_DTYPE)


# Suffix tokens appended to a name as the schema tree is descended.
TOK_LIST_OFFSET = "Lo"
TOK_LIST_DATA = "Ld"
TOK_UNION_TAG = "Ut"
TOK_UNION_OFFSET = "Uo"
TOK_UNION_DATA = "Ud"  # followed by the 0-based tag, e.g. "Ud0"
TOK_RECORD_FIELD = "R_"  # followed by the field name, e.g. "R_pt"


@dataclass(frozen=True)
class ColumnName:
    """A column name: a prefix plus a path of suffix tokens.

    The rendered form joins prefix and tokens with the delimiter; rendering
    then parsing is the identity. Prefixes must not contain the delimiter.
    """

    prefix: str
    steps: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.prefix or DELIMITER in self.prefix:
            raise InvalidSchema(f"bad column prefix: {self.prefix!r}")

    def child(self, token: str) -> "ColumnName":
        return ColumnName(self.prefix, self.steps + (token,))

    def render(self) -> str:
        return DELIMITER.join((self.prefix,) + self.steps)

    def __str__(self) -> str:
        return self.render()

    @classmethod
    def parse(cls, text: str, prefix: str | None = None) -> "ColumnName":
        if prefix is None:
            prefix = text.split(DELIMITER, 1)[0]
        if text != prefix and not text.startswith(prefix + DELIMITER):
            raise MalformedNames(f"{text!r} does not start with prefix {prefix!r}")
        rest = text[len(prefix):]
        steps = tuple(rest.split(DELIMITER)[1:]) if rest else ()
        for tok in steps:
            _classify_token(tok)  # validates
        return cls(prefix, steps)


def _classify_token(tok: str) -> tuple[str, int | str | None]:
    """Return (kind, detail) for one suffix token, or raise MalformedNames."""
    if tok == TOK_LIST_OFFSET:
        return ("Lo", None)
    if tok == TOK_LIST_DATA:
        return ("Ld", None)
    if tok == TOK_UNION_TAG:
        return ("Ut", None)
    if tok == TOK_UNION_OFFSET:
        return ("Uo", None)
    if tok.startswith(TOK_UNION_DATA) and tok[len(TOK_UNION_DATA):].isdigit():
        return ("Ud", int(tok[len(TOK_UNION_DATA):]))
    if tok.startswith(TOK_RECORD_FIELD) and len(tok) > len(TOK_RECORD_FIELD):
        return ("R", tok[len(TOK_RECORD_FIELD):])
    raise MalformedNames(f"unrecognized name token {tok!r}")


def columns_for(schema: Schema, prefix: str) -> dict[ColumnName, ColumnRole]:
    """All columns a value of ``schema`` stored under ``prefix`` occupies.

    Includes columns for union alternatives and list levels that may never
    hold data, so the full set exists even for sparse values. Unions get a
    derived offset column alongside the tag column for random access.
    """
    out: dict[ColumnName, ColumnRole] = {}
    _collect(schema, ColumnName(prefix), out)
    return out


def _collect(schema: Schema, name: ColumnName, out: dict[ColumnName, ColumnRole]) -> None:
    if isinstance(schema, Primitive):
        out[name] = ColumnRole.data(schema.dtype)
    elif isinstance(schema, List):
        out[name.child(TOK_LIST_OFFSET)] = ColumnRole.list_offset()
        _collect(schema.item, name.child(TOK_LIST_DATA), out)
    elif isinstance(schema, Union):
        out[name.child(TOK_UNION_TAG)] = ColumnRole.union_tag()
        out[name.child(TOK_UNION_OFFSET)] = ColumnRole.union_offset()
        for tag, alt in enumerate(schema.alternatives):
            _collect(alt, name.child(f"{TOK_UNION_DATA}{tag}"), out)
    elif isinstance(schema, Record):
        for field, sub in schema.fields.items():
            _collect(sub, name.child(f"{TOK_RECORD_FIELD}{field}"), out)
    else:
        raise InvalidSchema(f"not a schema node: {schema!r}")


def schema_from_names(
    names: Iterable[TyUnion[str, ColumnName]],
    dtypes: Mapping[str, Dtype],
    prefix: str | None = None,
) -> Schema:
    """Reconstruct the schema tree from a set of column names.

    ``dtypes`` maps rendered names to dtypes; only primitive data columns
    are consulted. Union nicknames are not recoverable from names. Raises
    MalformedNames for any name set the encoder could not have produced.
    """
    parsed: list[ColumnName] = []
    for n in names:
        parsed.append(n if isinstance(n, ColumnName) else ColumnName.parse(n, prefix))
    if not parsed:
        raise MalformedNames("empty name set")
    prefixes = {c.prefix for c in parsed}
    if len(prefixes) != 1:
        raise MalformedNames(f"names span multiple prefixes: {sorted(prefixes)}")
    entries = [(c.steps, c.render()) for c in parsed]
    if len({e[0] for e in entries}) != len(entries):
        raise MalformedNames("duplicate column names")
    return _rebuild(entries, dtypes)


def _rebuild(entries: list[tuple[tuple[str, ...], str]], dtypes: Mapping[str, Dtype]) -> Schema:
    if len(entries) == 1 and entries[0][0] == ():
        rendered = entries[0][1]
        if rendered not in dtypes:
            raise MalformedNames(f"no dtype known for data column {rendered!r}")
        return Primitive(dtypes[rendered])
    if any(steps == () for steps, _ in entries):
        raise MalformedNames("data column mixed with structured columns")

    heads = [_classify_token(steps[0]) for steps, _ in entries]
    kinds = {h[0] for h in heads}

    if kinds <= {"Lo", "Ld"}:
        offsets = [e for e, h in zip(entries, heads) if h[0] == "Lo"]
        if len(offsets) != 1 or offsets[0][0] != (TOK_LIST_OFFSET,):
            raise MalformedNames("list level needs exactly one terminal offset column")
        inner = [(steps[1:], r) for (steps, r), h in zip(entries, heads) if h[0] == "Ld"]
        if not inner:
            raise MalformedNames("list offset column without data columns")
        return List(_rebuild(inner, dtypes))

    if kinds <= {"Ut", "Uo", "Ud"}:
        tags_cols = [e for e, h in zip(entries, heads) if h[0] == "Ut"]
        off_cols = [e for e, h in zip(entries, heads) if h[0] == "Uo"]
        if len(tags_cols) != 1 or tags_cols[0][0] != (TOK_UNION_TAG,):
            raise MalformedNames("union level needs exactly one terminal tag column")
        if len(off_cols) > 1 or any(e[0] != (TOK_UNION_OFFSET,) for e in off_cols):
            raise MalformedNames("union level allows at most one terminal offset column")
        by_tag: dict[int, list[tuple[tuple[str, ...], str]]] = {}
        for (steps, r), h in zip(entries, heads):
            if h[0] == "Ud":
                by_tag.setdefault(h[1], []).append((steps[1:], r))
        n = len(by_tag)
        if n < 2 or sorted(by_tag) != list(range(n)):
            raise MalformedNames(f"union tags not contiguous from 0: {sorted(by_tag)}")
        return Union(_rebuild(by_tag[t], dtypes) for t in range(n))

    if kinds == {"R"}:
        by_field: dict[str, list[tuple[tuple[str, ...], str]]] = {}
        for (steps, r), h in zip(entries, heads):
            by_field.setdefault(h[1], []).append((steps[1:], r))
        return Record({f: _rebuild(sub, dtypes) for f, sub in by_field.items()})

    raise MalformedNames(f"conflicting column kinds at one level: {sorted(kinds)}")


def accepts(required: Schema, offered: Schema) -> bool:
    """Structural compatibility: can a consumer of ``required`` read ``offered``?

    Records may offer extra fields; every offered union alternative must be
    accepted by some required alternative. Total: never raises.
    """
    if isinstance(required, Primitive):
        return isinstance(offered, Primitive) and required.dtype is offered.dtype
    if isinstance(required, List):
        return isinstance(offered, List) and accepts(required.item, offered.item)
    if isinstance(required, Record):
        if not isinstance(offered, Record):
            return False
        return all(
            f in offered.fields and accepts(sub, offered.fields[f])
            for f, sub in required.fields.items()
        )
    if isinstance(required, Union):
        if not isinstance(offered, Union):
            return False
        return all(
            any(accepts(r, o) for r in required.alternatives)
            for o in offered.alternatives
        )
    return False


def schema_to_obj(schema: Schema):
    """Schema as plain JSON-compatible data."""
    if isinstance(schema, Primitive):
        return str(schema.dtype)
    if isinstance(schema, List):
        return {"list": schema_to_obj(schema.item)}
    if isinstance(schema, Union):
        out = {"union": [schema_to_obj(a) for a in schema.alternatives]}
        if schema.nicknames is not None:
            out["nicknames"] = list(schema.nicknames)
        return out
    if isinstance(schema, Record):
        return {"record": {f: schema_to_obj(s) for f, s in schema.fields.items()}}
    raise InvalidSchema(f"not a schema node: {schema!r}")


def schema_from_obj(obj) -> Schema:
    """Inverse of schema_to_obj. Raises InvalidSchema on anything else."""
    if isinstance(obj, str):
        return Primitive(Dtype.from_name(obj))
    if isinstance(obj, dict):
        if "list" in obj:
            return List(schema_from_obj(obj["list"]))
        if "union" in obj:
            alts = [schema_from_obj(a) for a in obj["union"]]
            return Union(alts, obj.get("nicknames"))
        if "record" in obj:
            return Record({f: schema_from_obj(s) for f, s in obj["record"].items()})
    raise InvalidSchema(f"not a schema description: {obj!r}")


def schema_to_json(schema: Schema) -> str:
    return json.dumps(schema_to_obj(schema), indent=2)


def schema_from_json(text: str) -> Schema:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InvalidSchema(f"schema is not valid JSON: {exc}") from None
    return schema_from_obj(obj)
