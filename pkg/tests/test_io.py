import numpy as np
import pytest
from hypothesis import given, strategies as st

from bchar import io
from bchar.errors import ConfigError
from bchar.mesh import Domain, build_mesh
from bchar.scheme import StepDiagnostics


def test_fmt():
    assert io.fmt(3) == "3"
    assert io.fmt(np.int64(-2)) == "-2"
    assert io.fmt(0.1) == "1.000000000e-01"


def test_write_field_2d_and_3d(tmp_path):
    mesh = build_mesh(Domain.unit((2, 2)))
    io.write_field(tmp_path / "f.csv", mesh, np.arange(4.0))
    lines = (tmp_path / "f.csv").read_bytes().decode("utf-8").split("\n")
    assert lines[0] == "i,j,x,y,c"
    assert lines[2] == "1,0,7.500000000e-01,2.500000000e-01,1.000000000e+00"
    mesh3 = build_mesh(Domain.unit((1, 1, 2)))
    io.write_field(tmp_path / "g.csv", mesh3, [5.0, 6.0])
    assert (tmp_path / "g.csv").read_text().splitlines()[0] == "i,j,k,x,y,z,c"
    assert b"\r" not in (tmp_path / "g.csv").read_bytes()


def test_vtk_layout_and_round_trip(tmp_path, rng):
    mesh = build_mesh(Domain((0.0, 1.0), (2.0, 2.0), (4, 2)))
    vals = rng.uniform(size=mesh.n_cells)
    io.write_vtk(tmp_path / "a.vtk", mesh, vals, title="demo")
    lines = (tmp_path / "a.vtk").read_text().splitlines()
    assert lines[:4] == ["# vtk DataFile Version 3.0", "demo", "ASCII", "DATASET STRUCTURED_POINTS"]
    assert lines[4] == "DIMENSIONS 5 3 2"
    assert lines[5] == "ORIGIN 0.000000000e+00 1.000000000e+00 0.000000000e+00"
    assert lines[7] == "CELL_DATA 8"
    np.testing.assert_allclose(io.read_vtk_cells(tmp_path / "a.vtk"), vals, rtol=1e-9)


def test_diagnostics_columns(tmp_path):
    d = StepDiagnostics(1, 0.8, 1.0, 0.0, 0.01, 10, 1e-12, 1.2, 3, 40, 0, 0.0, 1.0, 0.123)
    io.write_diagnostics(tmp_path / "d.csv", [d])
    head, row = (tmp_path / "d.csv").read_text().splitlines()
    assert "wall_time" not in head
    assert row.startswith("1,8.000000000e-01,")
    io.write_diagnostics(tmp_path / "t.csv", [d], io.TIMING_COLUMNS)
    assert (tmp_path / "t.csv").read_text().splitlines()[1] == "1,1.230000000e-01"


def test_config_parsing(tmp_path):
    text = "# run\ncase = tc1_2d\nmesh=16x16  # inline\n\nrebalance-iters=10\n"
    assert io.parse_config_text(text) == {"case": "tc1_2d", "mesh": "16x16", "rebalance_iters": "10"}
    with pytest.raises(ConfigError, match=":2:"):
        io.parse_config_text("a=1\nnot a pair\n", "cfg")
    with pytest.raises(ConfigError, match="cannot read"):
        io.read_config(tmp_path / "missing.cfg")


def test_parse_dims_and_numbers():
    assert io.parse_dims("16x16") == (16, 16)
    assert io.parse_dims("8X4x2") == (8, 4, 2)
    for bad in ("16", "16x", "0x4", "1x2x3x4"):
        with pytest.raises(ConfigError):
            io.parse_dims(bad)
    assert io.eval_number("2*pi/10") == pytest.approx(2 * np.pi / 10)
    assert io.parse_float_list("0.5, 1,pi") == pytest.approx([0.5, 1.0, np.pi])
    with pytest.raises(ValueError):
        io.eval_number("__import__('os')")


@given(st.floats(min_value=-1e300, max_value=1e300, allow_nan=False))
def test_fmt_round_trips_to_nine_digits(v):
    assert float(io.fmt(v)) == pytest.approx(v, rel=1e-9, abs=0.0)
