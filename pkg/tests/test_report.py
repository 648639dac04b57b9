import json
import re

import jsonschema
import numpy as np
import pytest

from landau_torus.report import (
    SUMMARY_SCHEMA,
    ReportError,
    ReportWriter,
    csv_text,
    format_number,
    grid_rows,
    summary_text,
    svg_heatmap,
)


def minimal_summary(**extra):
    s = {
        "schema_version": 1,
        "subcommand": "qll",
        "config": {"a": 1},
        "tolerances": {"x": 1e-8},
        "scalars": {"energy": {"value": 0.1, "tolerance": None}},
        "checks": [{"name": "x", "value": 1e-9, "tolerance": 1e-8, "passed": True}],
        "artifacts": [],
        "passed": True,
    }
    s.update(extra)
    return s


def test_format_number_roundtrips():
    for x in (0.1, 1 / 3, 2.0**-40, 1e300, -7.25):
        assert float(format_number(x)) == x
    assert format_number(np.int64(4)) == "4"
    assert format_number(True) == "true"
    assert format_number(float("nan")) == "nan"


def test_csv_text_stable():
    rows = [{"a": 1, "b": 0.5}, {"a": 2, "b": 1 / 3}]
    text = csv_text(rows)
    assert text == "a,b\n1,0.5\n2,0.33333333333333331\n"
    assert csv_text(rows) == text
    with pytest.raises(ValueError):
        csv_text([])


def test_grid_rows():
    rows = grid_rows(np.arange(4.0).reshape(2, 2), 1.0)
    assert rows[3] == {"i": 1, "j": 1, "x": 0.5, "y": 0.5, "value": 3.0}


def test_summary_validates():
    text = summary_text(minimal_summary())
    data = json.loads(text)
    jsonschema.validate(data, SUMMARY_SCHEMA)
    assert text == summary_text(minimal_summary())


def test_summary_rejects_bad_fields():
    with pytest.raises(jsonschema.ValidationError):
        summary_text(minimal_summary(extra=1))
    with pytest.raises(jsonschema.ValidationError):
        summary_text(minimal_summary(subcommand="other"))


def test_nonfinite_becomes_null():
    s = minimal_summary(scalars={"e": {"value": float("inf"), "tolerance": None}})
    assert json.loads(summary_text(s))["scalars"]["e"]["value"] is None


def test_svg_aspect_and_downsampling():
    svg = svg_heatmap(np.random.default_rng(0).normal(size=(256, 64)))
    w = int(re.search(r'width="(\d+)"', svg).group(1))
    h = int(re.search(r'height="(\d+)"', svg).group(1))
    assert w == 4 * h
    assert svg.count("<rect") == 128 * 32


def test_writer_creates_nothing_until_write(tmp_path):
    out = tmp_path / "run"
    wr = ReportWriter(out)
    wr.add_csv("a.csv", [{"x": 1}])
    wr.add_bytes("b.bin", b"\x00\x01")
    assert not out.exists()
    arts = wr.write(minimal_summary())
    assert arts == ["a.csv", "b.bin", "summary.json"]
    assert (out / "b.bin").read_bytes() == b"\x00\x01"
    assert json.loads((out / "summary.json").read_text())["artifacts"] == arts


def test_writer_unwritable(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(ReportError):
        ReportWriter(blocker / "sub").write(minimal_summary())
