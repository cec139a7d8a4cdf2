import json

import numpy as np
from hypothesis import given
from hypothesis import strategies as st

from physaware.io import atomic_write_text, config_hash, csv_text, fmt, read_csv, write_csv, write_manifest


@given(st.floats(allow_nan=False, allow_infinity=False))
def test_float_round_trip(x):
    assert float(fmt(x)) == x


def test_cell_formats():
    assert fmt(True) == "1" and fmt(np.bool_(False)) == "0"
    assert fmt(np.int64(7)) == "7"
    assert fmt(0.1) == "0.10000000000000001"
    assert fmt("GP_R") == "GP_R"


def test_csv_layout(tmp_path):
    p = write_csv(tmp_path / "a.csv", ["k", "v"], [("x", 1.5), ("y", 2)])
    assert p.read_bytes() == b"k,v\nx,1.5\ny,2\n"
    assert read_csv(p) == (["k", "v"], [["x", "1.5"], ["y", "2"]])
    assert csv_text(["a"], []) == "a\n"


def test_atomic_write_leaves_no_temp(tmp_path):
    atomic_write_text(tmp_path / "sub" / "f.txt", "hello")
    assert [p.name for p in (tmp_path / "sub").iterdir()] == ["f.txt"]


def test_config_hash_order_independent():
    assert config_hash({"a": 1, "b": [1, 2]}) == config_hash({"b": [1, 2], "a": 1})
    assert config_hash({"a": 1}) != config_hash({"a": 2})


def test_manifest(tmp_path):
    f = write_csv(tmp_path / "x" / "t.csv", ["a"], [(1,)])
    m = write_manifest(tmp_path, {"seed": 1}, {"run": 0.5}, [f], "9.9")
    doc = json.loads(m.read_text())
    assert doc["files"] == ["x/t.csv"]
    assert doc["version"] == "9.9"
    assert doc["config_hash"] == config_hash({"seed": 1})
