"""
Tests de los escritores de ficheros de datos y de la sesión de salida.
"""
import json
import math

import pytest

from app.core.errors import MissingPrerequisiteError
from app.services import reports
from app.services.reports import OutputSession


def test_format_cell():
    assert reports.format_cell(None) == ""
    assert reports.format_cell(True) == "true"
    assert reports.format_cell(0.1) == "0.1"
    assert reports.format_cell(1e-20) == "1e-20"
    assert reports.format_cell(math.nan) == "nan"
    assert reports.format_cell(3) == "3"
    assert reports.format_cell({"b": 1, "a": [1, 2]}) == '{"a":[1,2],"b":1}'


def test_render_csv_header_and_quoting():
    text = reports.render_csv([{"x": 1.5, "note": 'a,"b"'}], ["x", "note"])
    assert text == 'x,note\n1.5,"a,""b"""\n'


def test_render_csv_round_trips_through_reader(tmp_path):
    rows = [{"name": "n", "inputs": {"m": 4}, "value": 0.25}]
    path = tmp_path / "t.csv"
    path.write_text(reports.render_csv(rows), encoding="utf-8")
    back = reports.read_csv_rows(path)
    assert back == [{"name": "n", "inputs": '{"m":4}', "value": "0.25"}]
    assert float(back[0]["value"]) == 0.25


def test_render_csv_empty_table():
    assert reports.render_csv([], ["a", "b"]) == "a,b\n"
    with pytest.raises(ValueError):
        reports.render_csv([])


def test_render_jsonl_sorted_keys():
    assert reports.render_jsonl([{"b": 1, "a": 2}, {"c": 3}]) == '{"a":2,"b":1}\n{"c":3}\n'


def test_session_writes_manifest(tmp_path):
    with OutputSession(tmp_path / "out", "attack", "abc", seed=5, workers=2) as session:
        session.add_seed_plan(0, [5, 1, 0])
        session.write_csv("a.csv", [{"k": 1}])
        session.write_json("b.json", {"x": 1})
    manifest = json.loads((tmp_path / "out" / reports.MANIFEST_FILE).read_text())
    assert manifest["outputs"] == ["a.csv", "b.json"]
    assert manifest["seed_plan"] == [{"replicate": 0, "stream": [5, 1, 0]}]
    assert manifest["finished_at"] is not None
    assert manifest["config_hash"] == "abc"


def test_session_removes_partial_outputs(tmp_path):
    out = tmp_path / "out"
    with pytest.raises(RuntimeError):
        with OutputSession(out, "attack", "abc", seed=0) as session:
            session.write_jsonl("traces.jsonl", [{"t": 1}])
            raise RuntimeError("boom")
    assert not (out / "traces.jsonl").exists()
    assert not (out / reports.MANIFEST_FILE).exists()


def test_session_uses_unix_newlines(tmp_path):
    with OutputSession(tmp_path, "sweep", "h", seed=0) as session:
        path = session.write_csv("s.csv", [{"a": 1}, {"a": 2}])
    assert path.read_bytes() == b"a\n1\n2\n"


def test_read_json_names_producer(tmp_path):
    with pytest.raises(MissingPrerequisiteError, match="fedleak estimate-mbp"):
        reports.read_json(tmp_path / "mbp.json", "estimate-mbp")
