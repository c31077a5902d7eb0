"""Schema trees, the naming convention, and structural compatibility."""

import random

import pytest
from hypothesis import given, settings, strategies as st

import nestcol as nc
from nestcol.schema import ColumnName, RoleKind

from conftest import random_schema

F64 = nc.Primitive(nc.Dtype.FLOAT64)


def rendered(schema, prefix):
    return {c.render(): role for c, role in nc.columns_for(schema, prefix).items()}


def widen(rng: random.Random, s: nc.Schema) -> nc.Schema:
    """A schema that ``s`` accepts: records may gain fields, unions may
    drop alternatives, everything else widens recursively."""
    if isinstance(s, nc.Primitive):
        return s
    if isinstance(s, nc.List):
        return nc.List(widen(rng, s.item))
    if isinstance(s, nc.Union):
        keep = [widen(rng, a) for a in s.alternatives]
        if len(keep) > 2 and rng.random() < 0.3:
            keep = keep[:-1]
        return nc.Union(keep)
    fields = {f: widen(rng, sub) for f, sub in s.fields.items()}
    for extra in ("x0", "x1"):
        if rng.random() < 0.4 and extra not in fields:
            fields[extra] = nc.Primitive(nc.Dtype.INT64)
    return nc.Record(fields)


class TestColumnsFor:
    def test_primitive_leaf(self):
        cols = rendered(F64, "x")
        assert cols == {"x": nc.ColumnRole.data(nc.Dtype.FLOAT64)}

    def test_list_of_floats(self):
        cols = rendered(nc.List(F64), "x")
        assert set(cols) == {"x-Lo", "x-Ld"}
        assert cols["x-Lo"].kind is RoleKind.LIST_OFFSET
        assert cols["x-Lo"].dtype is nc.Dtype.INT64
        assert cols["x-Ld"] == nc.ColumnRole.data(nc.Dtype.FLOAT64)

    def test_union_gets_offset_column_and_zero_based_tags(self):
        cols = rendered(nc.Union([F64, nc.List(F64)]), "x")
        assert set(cols) == {"x-Ut", "x-Uo", "x-Ud0", "x-Ud1-Lo", "x-Ud1-Ld"}
        assert cols["x-Ut"].kind is RoleKind.UNION_TAG
        assert cols["x-Ut"].dtype is nc.Dtype.UINT8
        assert cols["x-Uo"].kind is RoleKind.UNION_OFFSET
        assert cols["x-Ud0"] == nc.ColumnRole.data(nc.Dtype.FLOAT64)

    def test_record_adds_no_structure_columns(self):
        cols = rendered(nc.Record({"pt": F64, "eta": F64}), "m")
        assert set(cols) == {"m-R_pt", "m-R_eta"}

    def test_untouched_alternatives_still_have_columns(self):
        # every alternative contributes columns even if no data will land there
        cols = rendered(nc.Union([F64, nc.Record({"a": F64})]), "x")
        assert "x-Ud1-R_a" in cols

    def test_rendered_names_pairwise_distinct(self):
        rng = random.Random(7)
        for _ in range(50):
            schema = random_schema(rng)
            names = [c.render() for c in nc.columns_for(schema, "root")]
            assert len(names) == len(set(names))


class TestSchemaInvariants:
    def test_field_name_with_delimiter_rejected(self):
        with pytest.raises(nc.InvalidSchema):
            nc.Record({"bad-name": F64})

    def test_union_needs_two_alternatives(self):
        with pytest.raises(nc.InvalidSchema):
            nc.Union([F64])

    def test_record_needs_a_field(self):
        with pytest.raises(nc.InvalidSchema):
            nc.Record({})

    def test_nickname_count_must_match(self):
        with pytest.raises(nc.InvalidSchema):
            nc.Union([F64, F64], ["only-one"])

    def test_prefix_with_delimiter_rejected(self):
        with pytest.raises(nc.InvalidSchema):
            nc.columns_for(F64, "a-b")

    def test_nicknames_do_not_affect_equality(self):
        u1 = nc.Union([F64, nc.List(F64)], ["A", "B"])
        u2 = nc.Union([F64, nc.List(F64)])
        assert u1 == u2 and hash(u1) == hash(u2)

    def test_record_field_order_is_presentation_only(self):
        r1 = nc.Record({"a": F64, "b": F64})
        r2 = nc.Record({"b": F64, "a": F64})
        assert r1 == r2


class TestSchemaFromNames:
    def test_list_example(self):
        schema = nc.schema_from_names(["x-Lo", "x-Ld"], {"x-Ld": nc.Dtype.FLOAT64})
        assert schema == nc.List(F64)

    def test_record_example(self):
        schema = nc.schema_from_names(
            ["x-R_pt", "x-R_eta"],
            {"x-R_pt": nc.Dtype.FLOAT64, "x-R_eta": nc.Dtype.FLOAT64},
        )
        assert schema == nc.Record({"pt": F64, "eta": F64})

    def test_mixed_roles_malformed(self):
        with pytest.raises(nc.MalformedNames):
            nc.schema_from_names(["x-Lo", "x-R_pt"], {"x-R_pt": nc.Dtype.FLOAT64})

    def test_union_with_and_without_offset_column(self):
        dtypes = {"x-Ud0": nc.Dtype.FLOAT64, "x-Ud1": nc.Dtype.INT64}
        expected = nc.Union([F64, nc.Primitive(nc.Dtype.INT64)])
        assert nc.schema_from_names(["x-Ut", "x-Ud0", "x-Ud1"], dtypes) == expected
        assert nc.schema_from_names(["x-Ut", "x-Uo", "x-Ud0", "x-Ud1"], dtypes) == expected

    def test_union_tags_must_be_contiguous(self):
        with pytest.raises(nc.MalformedNames):
            nc.schema_from_names(
                ["x-Ut", "x-Ud0", "x-Ud2"],
                {"x-Ud0": nc.Dtype.FLOAT64, "x-Ud2": nc.Dtype.FLOAT64},
            )

    def test_missing_dtype_is_malformed(self):
        with pytest.raises(nc.MalformedNames):
            nc.schema_from_names(["x"], {})

    def test_multiple_prefixes_rejected(self):
        with pytest.raises(nc.MalformedNames):
            nc.schema_from_names(["x", "y"], {"x": nc.Dtype.FLOAT64, "y": nc.Dtype.FLOAT64})

    def test_unrecognized_token_malformed(self):
        with pytest.raises(nc.MalformedNames):
            nc.schema_from_names(["x-Zz"], {})

    def test_round_trip_randomized(self):
        rng = random.Random(11)
        for _ in range(200):
            schema = random_schema(rng)
            cols = nc.columns_for(schema, "d")
            dtypes = {c.render(): role.dtype for c, role in cols.items()}
            back = nc.schema_from_names([c.render() for c in cols], dtypes, "d")
            assert back == schema


class TestAccepts:
    def test_extra_fields_accepted(self):
        required = nc.Record({"pt": F64})
        offered = nc.Record({"pt": F64, "eta": F64})
        assert nc.accepts(required, offered)

    def test_identical_schemas(self):
        rng = random.Random(3)
        for _ in range(30):
            s = random_schema(rng)
            assert nc.accepts(s, s)

    def test_missing_field_rejected(self):
        assert not nc.accepts(nc.Record({"pt": F64}), nc.Record({"eta": F64}))

    def test_dtype_mismatch_rejected(self):
        assert not nc.accepts(F64, nc.Primitive(nc.Dtype.INT64))

    def test_cross_kind_rejected(self):
        assert not nc.accepts(nc.List(F64), nc.Record({"a": F64}))

    def test_union_requires_every_offered_alternative(self):
        req = nc.Union([F64, nc.List(F64)])
        assert nc.accepts(req, nc.Union([F64, nc.List(F64)]))
        assert nc.accepts(req, nc.Union([nc.List(F64), F64]))  # order-free
        assert not nc.accepts(req, nc.Union([F64, nc.Primitive(nc.Dtype.INT64)]))

    def test_transitive_on_random_triples(self):
        # widen() builds an offered schema the base accepts by construction,
        # so chains a <= b <= c occur constantly instead of almost never.
        rng = random.Random(5)
        for _ in range(300):
            a = random_schema(rng, max_depth=3)
            b = widen(rng, a)
            c = widen(rng, b)
            assert nc.accepts(a, b) and nc.accepts(b, c)
            assert nc.accepts(a, c)

    def test_transitive_on_unrelated_triples(self):
        rng = random.Random(6)
        for _ in range(3000):
            a, b, c = (random_schema(rng, max_depth=2) for _ in range(3))
            if nc.accepts(a, b) and nc.accepts(b, c):
                assert nc.accepts(a, c)


class TestColumnNames:
    def test_render_parse_identity(self):
        rng = random.Random(13)
        for _ in range(100):
            schema = random_schema(rng)
            for cname in nc.columns_for(schema, "pre"):
                assert ColumnName.parse(cname.render()) == cname

    def test_parse_with_explicit_prefix(self):
        c = ColumnName.parse("ev-Ld-R_pt", prefix="ev")
        assert c.prefix == "ev" and c.steps == ("Ld", "R_pt")

    def test_parse_wrong_prefix(self):
        with pytest.raises(nc.MalformedNames):
            ColumnName.parse("ev-Ld", prefix="other")


@settings(max_examples=60, deadline=None)
@given(st.integers(min_value=0, max_value=10**9))
def test_json_round_trip_random_schemas(seed):
    rng = random.Random(seed)
    schema = random_schema(rng)
    assert nc.schema_from_json(nc.schema_to_json(schema)) == schema


def test_json_nicknames_survive():
    u = nc.Union([F64, nc.List(F64)], ["num", "seq"])
    back = nc.schema_from_json(nc.schema_to_json(u))
    assert back.nicknames == ("num", "seq")


def test_json_rejects_garbage():
    with pytest.raises(nc.InvalidSchema):
        nc.schema_from_json('{"what": 1}')
    with pytest.raises(nc.InvalidSchema):
        nc.schema_from_json("not json at all {")
