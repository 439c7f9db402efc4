import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from bhtwofold.errors import MapFormatError
from bhtwofold.maps import CorrelationMap, read_map, sidecar_path, write_map


def small_map(**kw):
    R = np.arange(1, 4)
    t = np.array([0.1, 0.2, 0.3, 0.4])
    v = np.outer(R, t) - 0.05
    v[1, 2] = np.nan
    return CorrelationMap("G1", R, t, v, {"engine": "ed", "M": 4}, magnitude=np.abs(v), **kw)


def test_round_trip_is_exact(tmp_path):
    m = small_map(raw=np.ones((3, 4)))
    p = write_map(m, tmp_path / "G1.csv")
    back = read_map(p)
    assert back.kind == "G1"
    np.testing.assert_array_equal(back.R_values, m.R_values)
    np.testing.assert_array_equal(back.t_values, m.t_values)
    np.testing.assert_array_equal(back.values, m.values)
    np.testing.assert_array_equal(back.magnitude, m.magnitude)
    np.testing.assert_array_equal(back.raw, m.raw)
    assert back.missing[1, 2] and back.missing.sum() == 1
    assert back.metadata == {"engine": "ed", "M": 4}


def test_serialization_is_byte_stable(tmp_path):
    m = small_map()
    a = write_map(m, tmp_path / "a.csv").read_bytes()
    b = write_map(read_map(tmp_path / "a.csv"), tmp_path / "b.csv").read_bytes()
    assert a == b
    assert sidecar_path(tmp_path / "a.csv").read_text() == sidecar_path(tmp_path / "b.csv").read_text()


@given(v=arrays(np.float64, (3, 5), elements=st.floats(-1e6, 1e6, allow_nan=False)))
@settings(max_examples=30, deadline=None)
def test_round_trip_property(tmp_path_factory, v):
    d = tmp_path_factory.mktemp("rt")
    m = CorrelationMap("G2", [1, 2, 5], np.linspace(0.1, 0.5, 5), v)
    np.testing.assert_array_equal(read_map(write_map(m, d / "m.csv")).values, v)


def test_truncated_file_names_line(tmp_path):
    p = write_map(small_map(), tmp_path / "m.csv")
    lines = p.read_text().splitlines()
    p.write_text("\n".join(lines[:7] + [lines[7].rsplit(",", 2)[0]]) + "\n")
    with pytest.raises(MapFormatError, match="line 8"):
        read_map(p)
    p.write_text("\n".join(lines[:8]) + "\n")
    with pytest.raises(MapFormatError, match="incomplete grid"):
        read_map(p)


def test_bad_inputs(tmp_path):
    p = tmp_path / "m.csv"
    p.write_text("")
    with pytest.raises(MapFormatError, match="empty"):
        read_map(p)
    p.write_text("x,y\n")
    with pytest.raises(MapFormatError, match="line 1"):
        read_map(p)
    p.write_text("R,t,value\n1,0.1,abc\n")
    with pytest.raises(MapFormatError, match="line 2"):
        read_map(p)
    p.write_text("R,t,value\n1.5,0.1,1\n")
    with pytest.raises(MapFormatError, match="integer"):
        read_map(p)
    p.write_text("R,t,value\n2,0.1,1\n1,0.1,1\n")
    with pytest.raises(MapFormatError, match="order"):
        read_map(p)
    with pytest.raises(MapFormatError):
        read_map(tmp_path / "absent.csv")
    write_map(small_map(), p)
    sidecar_path(p).write_text("{\n  broken")
    with pytest.raises(MapFormatError, match="line 2"):
        read_map(p)


def test_validation_and_views():
    with pytest.raises(ValueError):
        CorrelationMap("G3", [1], [0.1], [[0.0]])
    with pytest.raises(ValueError, match="increasing"):
        CorrelationMap("G2", [2, 1], [0.1], [[0.0], [1.0]])
    with pytest.raises(ValueError, match="shape"):
        CorrelationMap("G2", [1, 2], [0.1], [[0.0]])
    m = small_map()
    assert m.scaled(-2).magnitude[0, 0] == pytest.approx(2 * m.magnitude[0, 0])
    assert m.shifted(1.0).t_values[0] == pytest.approx(1.1)
    assert m.select("magnitude").metadata["quantity"] == "magnitude"
    with pytest.raises(KeyError):
        m.select("raw")
    sub = m.subsample_t(2)
    np.testing.assert_allclose(sub.t_values, [0.2, 0.4])
    np.testing.assert_array_equal(m.row(2), m.values[1])
    with pytest.raises(ValueError):
        m.values[0, 0] = 1.0


def test_sidecar_is_json(tmp_path):
    p = write_map(small_map(), tmp_path / "m.csv")
    side = json.loads(sidecar_path(p).read_text())
    assert side["columns"] == ["R", "t", "value", "magnitude"]
    assert side["shape"] == [3, 4]
