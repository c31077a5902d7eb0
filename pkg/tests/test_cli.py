"""End-to-end checks of every CLI subcommand."""

import json

import numpy as np
import pytest

import nestcol as nc
from nestcol.cli import main


def run_cli(capsys, *argv):
    rc = main(list(argv))
    captured = capsys.readouterr()
    return rc, captured.out, captured.err


@pytest.fixture
def dataset_dir(tmp_path, capsys):
    d = tmp_path / "events"
    rc, _, _ = run_cli(capsys, "generate", str(d), "--events", "50", "--seed", "11")
    assert rc == 0
    return d


@pytest.fixture
def query_file(tmp_path):
    f = tmp_path / "q.pq"
    f.write_text(nc.BUILTIN_QUERIES["max-pt"])
    return f


def test_generate_then_validate(dataset_dir, capsys):
    rc, out, _ = run_cli(capsys, "validate", str(dataset_dir))
    assert rc == 0
    assert out.strip() == "OK"


def test_validate_flags_corruption(dataset_dir, capsys):
    victim = dataset_dir / "event-Ld-R_muons-Lo.bin"
    data = np.fromfile(victim, dtype="<i8")
    data[0] = 5
    data.tofile(victim)
    rc, out, _ = run_cli(capsys, "validate", str(dataset_dir))
    assert rc == 1
    assert "first offset" in out


def test_run_engines_agree(dataset_dir, query_file, capsys):
    rc, out_c, _ = run_cli(capsys, "run", str(query_file), str(dataset_dir))
    assert rc == 0
    rc, out_m, _ = run_cli(
        capsys, "run", str(query_file), str(dataset_dir), "--engine", "materialized"
    )
    assert rc == 0
    assert out_c == out_m
    assert len(out_c.splitlines()) == 50


def test_run_flags(dataset_dir, query_file, capsys):
    rc, out_plain, _ = run_cli(
        capsys, "run", str(query_file), str(dataset_dir), "--no-range-checks", "--no-optimize"
    )
    assert rc == 0
    rc, out_opt, _ = run_cli(capsys, "run", str(query_file), str(dataset_dir))
    assert out_plain == out_opt


def test_run_uncompilable_suggests_fallback(dataset_dir, tmp_path, capsys):
    bad = tmp_path / "bad.pq"
    bad.write_text("def f(event) { emit(event.muons) }")
    rc, _, err = run_cli(capsys, "run", str(bad), str(dataset_dir))
    assert rc == 2
    assert "compile error" in err
    assert "materialized" in err


def test_encode_decode_round_trip(tmp_path, capsys):
    schema = {
        "list": {
            "record": {
                "a": "float64",
                "b": {"union": ["int64", {"list": "bool"}], "nicknames": ["num", "flags"]},
            }
        }
    }
    payload = [
        {"a": 1.5, "b": {"tag": 0, "value": 7}},
        {"a": -2.0, "b": {"tag": 1, "value": [True, False]}},
    ]
    values_file = tmp_path / "values.json"
    values_file.write_text(json.dumps(payload))
    schema_file = tmp_path / "schema.json"
    schema_file.write_text(json.dumps(schema))
    out_dir = tmp_path / "enc"
    rc, out, _ = run_cli(
        capsys, "encode", str(values_file), str(schema_file), str(out_dir), "--prefix", "rows"
    )
    assert rc == 0 and "encoded" in out
    rc, out, _ = run_cli(capsys, "decode", str(out_dir))
    assert rc == 0
    assert json.loads(out) == [payload]
    rc, out, _ = run_cli(capsys, "decode", str(out_dir), "--path", "1.b.*")
    assert rc == 0
    assert json.loads(out) == [True, False]
    rc, out, _ = run_cli(capsys, "decode", str(out_dir), "--path", "0.a")
    assert json.loads(out) == 1.5


def test_decode_path_errors(dataset_dir, capsys):
    rc, _, err = run_cli(capsys, "decode", str(dataset_dir), "--path", "0.nope")
    assert rc == 1
    assert "error" in err


def test_explain(tmp_path, query_file, capsys):
    schema_file = tmp_path / "schema.json"
    schema_file.write_text(nc.schema_to_json(nc.DATASET_SCHEMA))
    rc, out, _ = run_cli(capsys, "explain", str(query_file), str(schema_file))
    assert rc == 0
    assert out.startswith("plan max_pt over event")
    assert "read!" in out
    rc, out_unchecked, _ = run_cli(
        capsys, "explain", str(query_file), str(schema_file), "--no-range-checks"
    )
    assert "read!(" not in out_unchecked


def test_explain_inline_schema(query_file, capsys):
    inline = nc.schema_to_json(nc.DATASET_SCHEMA)
    rc, out, _ = run_cli(capsys, "explain", str(query_file), inline)
    assert rc == 0 and out.startswith("plan")


def test_bench_prints_rate_and_counts(dataset_dir, capsys):
    rc, out, _ = run_cli(
        capsys, "bench", str(dataset_dir), "--query", "pt-sum-of-pairs", "--engine", "columnar"
    )
    assert rc == 0
    assert "events/s" in out
    assert "verified against the other engine" in out
    assert "element reads per column" in out
    assert "event-Ld-R_muons-Ld-R_pt" in out


def test_bench_unknown_query(dataset_dir, capsys):
    rc, _, err = run_cli(capsys, "bench", str(dataset_dir), "--query", "nope")
    assert rc == 1
    assert "unknown query" in err


def test_error_reporting_is_clean(tmp_path, capsys):
    rc, _, err = run_cli(capsys, "validate", str(tmp_path / "missing"))
    assert rc == 1
    assert err.startswith("error:")
