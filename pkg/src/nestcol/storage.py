"""On-disk store format and the JSON mapping for values.

A store directory holds one raw little-endian binary file per column plus
``manifest.txt``, flat ``key = value`` text carrying the format version,
the prefix, the outer event count, and per-column name, dtype, element
count, and file name. Structure is recoverable from column names alone;
the manifest supplies what names cannot: primitive dtypes and lengths.
Union offset columns are derived from tag columns when absent on disk.
"""

from __future__ import annotations

import os
from pathlib import Path
from typing import Mapping

import numpy as np

from .codec import ColumnStore, UnionValue, union_offsets
from .errors import StoreError, TypeMismatch
from .schema import (
    Dtype,
    List,
    Primitive,
    Record,
    RoleKind,
    Schema,
    Union,
    columns_for,
    schema_from_names,
)

MANIFEST_NAME = "manifest.txt"
FORMAT_VERSION = 1

_DISK_DTYPES = {
    Dtype.BOOL: np.dtype("?"),
    Dtype.INT64: np.dtype("<i8"),
    Dtype.FLOAT64: np.dtype("<f8"),
    Dtype.UINT8: np.dtype("u1"),
}


def _union_nickname_lines(schema: Schema, name: str, out: list[str]) -> None:
    if isinstance(schema, List):
        _union_nickname_lines(schema.item, name + "-Ld", out)
    elif isinstance(schema, Union):
        if schema.nicknames is not None:
            out.append(f"nicknames.{name}-Ut = {','.join(schema.nicknames)}")
        for t, alt in enumerate(schema.alternatives):
            _union_nickname_lines(alt, f"{name}-Ud{t}", out)
    elif isinstance(schema, Record):
        for f, sub in schema.fields.items():
            _union_nickname_lines(sub, f"{name}-R_{f}", out)


def _apply_nicknames(schema: Schema, name: str, nicks: Mapping[str, list[str]]) -> Schema:
    if isinstance(schema, List):
        return List(_apply_nicknames(schema.item, name + "-Ld", nicks))
    if isinstance(schema, Union):
        alts = [
            _apply_nicknames(alt, f"{name}-Ud{t}", nicks)
            for t, alt in enumerate(schema.alternatives)
        ]
        return Union(alts, nicks.get(f"{name}-Ut"))
    if isinstance(schema, Record):
        return Record({f: _apply_nicknames(s, f"{name}-R_{f}", nicks) for f, s in schema.fields.items()})
    return schema


def event_count(store: ColumnStore, schema: Schema, prefix: str) -> int:
    """Items inside the outer list; for event datasets, the event count."""
    if isinstance(schema, List):
        arr = store.array(prefix + "-Lo")
        return int(arr[-1] - arr[0])
    from .codec import top_count

    return top_count(store, schema, prefix)


def save_store(store: ColumnStore, path: str | os.PathLike, schema: Schema, prefix: str) -> None:
    """Write a frozen store to a directory; overwrites files already there."""
    store.freeze()
    directory = Path(path)
    directory.mkdir(parents=True, exist_ok=True)
    lines = [
        f"version = {FORMAT_VERSION}",
        f"prefix = {prefix}",
        f"events = {event_count(store, schema, prefix)}",
    ]
    for i, name in enumerate(store.names()):
        arr = store.array(name)
        dt = store.dtype(name)
        fname = name + ".bin"
        arr.astype(_DISK_DTYPES[dt]).tofile(directory / fname)
        lines.append(f"column.{i}.name = {name}")
        lines.append(f"column.{i}.dtype = {dt}")
        lines.append(f"column.{i}.count = {arr.size}")
        lines.append(f"column.{i}.file = {fname}")
    _union_nickname_lines(schema, prefix, lines)
    (directory / MANIFEST_NAME).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _parse_manifest(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise StoreError(f"manifest line {lineno} is not 'key = value': {raw!r}")
        key, _, value = line.partition("=")
        out[key.strip()] = value.strip()
    return out


def load_store(
    path: str | os.PathLike, instrumented: bool = False
) -> tuple[ColumnStore, Schema, str]:
    """Load a store directory: arrays, reconstructed schema, and prefix.

    Missing union offset columns are derived from the tag columns after
    loading; they are a cache, never required on disk.
    """
    directory = Path(path)
    manifest_path = directory / MANIFEST_NAME
    if not manifest_path.is_file():
        raise StoreError(f"no {MANIFEST_NAME} in {directory}")
    entries = _parse_manifest(manifest_path.read_text(encoding="utf-8"))
    version = entries.get("version")
    if version != str(FORMAT_VERSION):
        raise StoreError(f"unsupported store format version {version!r}")
    prefix = entries.get("prefix")
    if not prefix:
        raise StoreError("manifest is missing the prefix")
    arrays: dict[str, np.ndarray] = {}
    dtypes: dict[str, Dtype] = {}
    i = 0
    while f"column.{i}.name" in entries:
        name = entries[f"column.{i}.name"]
        dt = Dtype.from_name(entries[f"column.{i}.dtype"])
        count = int(entries[f"column.{i}.count"])
        fname = entries[f"column.{i}.file"]
        fpath = directory / fname
        if not fpath.is_file():
            raise StoreError(f"column file missing: {fname}")
        expected_bytes = count * dt.width
        actual = fpath.stat().st_size
        if actual != expected_bytes:
            raise StoreError(
                f"{fname}: {actual} bytes on disk, expected {count} x {dt.width} = {expected_bytes}"
            )
        data = np.fromfile(fpath, dtype=_DISK_DTYPES[dt])
        arrays[name] = data.astype(dt.to_numpy())
        dtypes[name] = dt
        i += 1
    if not arrays:
        raise StoreError("manifest lists no columns")
    schema = schema_from_names(arrays.keys(), dtypes, prefix)
    nicks = {
        key[len("nicknames."):]: value.split(",")
        for key, value in entries.items()
        if key.startswith("nicknames.")
    }
    if nicks:
        schema = _apply_nicknames(schema, prefix, nicks)
    for cname, role in columns_for(schema, prefix).items():
        rendered = cname.render()
        if role.kind is RoleKind.UNION_OFFSET and rendered not in arrays:
            tag_col = rendered[: -len("-Uo")] + "-Ut"
            n_alts = _alts_at(schema, prefix, rendered[: -len("-Uo")])
            arrays[rendered] = union_offsets(arrays[tag_col], n_alts)
            dtypes[rendered] = Dtype.INT64
    return ColumnStore.from_arrays(arrays, dtypes, instrumented=instrumented), schema, prefix


def _alts_at(schema: Schema, name: str, target: str) -> int:
    """Number of alternatives of the union whose columns live at ``target``."""
    found: list[int] = []

    def visit(s: Schema, n: str) -> None:
        if isinstance(s, List):
            visit(s.item, n + "-Ld")
        elif isinstance(s, Union):
            if n == target:
                found.append(len(s.alternatives))
            for t, alt in enumerate(s.alternatives):
                visit(alt, f"{n}-Ud{t}")
        elif isinstance(s, Record):
            for f, sub in s.fields.items():
                visit(sub, f"{n}-R_{f}")

    visit(schema, name)
    if not found:
        raise StoreError(f"no union at {target!r}")
    return found[0]


# ------------------------------------------------------------- JSON interface


def json_to_value(obj, schema: Schema):
    """Schema-directed conversion of parsed JSON into an encodable value.

    Unions are written as objects with exactly the keys "tag" and "value".
    """
    if isinstance(schema, Primitive):
        if schema.dtype is Dtype.BOOL:
            if isinstance(obj, bool):
                return obj
        elif schema.dtype is Dtype.FLOAT64:
            if isinstance(obj, (int, float)) and not isinstance(obj, bool):
                return float(obj)
        else:
            if isinstance(obj, int) and not isinstance(obj, bool):
                return obj
        raise TypeMismatch(f"JSON value {obj!r} does not fit {schema}")
    if isinstance(schema, List):
        if not isinstance(obj, list):
            raise TypeMismatch(f"expected a JSON array for {schema}, got {type(obj).__name__}")
        return [json_to_value(item, schema.item) for item in obj]
    if isinstance(schema, Union):
        if not isinstance(obj, dict) or set(obj.keys()) != {"tag", "value"}:
            raise TypeMismatch('unions need a {"tag": ..., "value": ...} wrapper')
        tag = obj["tag"]
        if not isinstance(tag, int) or not 0 <= tag < len(schema.alternatives):
            raise TypeMismatch(f"union tag {tag!r} out of range")
        nick = schema.nicknames[tag] if schema.nicknames else None
        return UnionValue(tag, json_to_value(obj["value"], schema.alternatives[tag]), nick)
    if isinstance(schema, Record):
        if not isinstance(obj, dict):
            raise TypeMismatch(f"expected a JSON object for {schema}")
        if set(obj.keys()) != set(schema.fields.keys()):
            raise TypeMismatch(
                f"record fields {sorted(obj.keys())} != schema fields {sorted(schema.fields.keys())}"
            )
        return {f: json_to_value(obj[f], sub) for f, sub in schema.fields.items()}
    raise TypeMismatch(f"not a schema node: {schema!r}")


def value_to_json(value):
    """Inverse of json_to_value; the result is json.dumps-able."""
    if isinstance(value, UnionValue):
        return {"tag": value.tag, "value": value_to_json(value.value)}
    if isinstance(value, list):
        return [value_to_json(v) for v in value]
    if isinstance(value, dict):
        return {k: value_to_json(v) for k, v in value.items()}
    return value
