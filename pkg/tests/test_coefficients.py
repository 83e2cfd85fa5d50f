import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lifecycle_obpi.coefficients import (Affine, ConfigError, Constant, OUDrift, Table, TanhZ, from_config,
                                         is_z_dependent, to_config)


def test_number_becomes_constant():
    f = from_config(0.03, "market.r")
    assert isinstance(f, Constant) and f(2.0, 1.0) == 0.03


@pytest.mark.parametrize("spec", [
    {"kind": "affine", "a": 0.01, "b": 0.002, "c": 0.0},
    {"kind": "tanh", "a": 0.07, "b": 0.02, "scale": 1.5},
    {"kind": "ou", "speed": 0.5, "mean": 0.0},
])
def test_round_trip(spec):
    f = from_config(spec, "x")
    g = from_config(to_config(f), "x")
    t, z = np.linspace(0, 5, 7), np.linspace(-2, 2, 7)
    assert np.allclose(f(t, z), g(t, z))


def test_unknown_kind_names_key():
    with pytest.raises(ConfigError, match="market.alpha"):
        from_config({"kind": "spline"}, "market.alpha")


def test_missing_table_names_key(tmp_path):
    with pytest.raises(ConfigError, match="market.r"):
        from_config({"kind": "table", "path": "missing.csv"}, "market.r", tmp_path)


def test_table_from_csv(tmp_path):
    p = tmp_path / "r.csv"
    p.write_text("t,z,value\n0,-1,1\n0,1,3\n1,-1,5\n1,1,7\n")
    f = from_config({"kind": "table", "path": "r.csv"}, "market.r", tmp_path)
    assert f.z_dependent
    assert f(0.5, 0.0) == pytest.approx(4.0)
    assert f(-3.0, -9.0) == pytest.approx(1.0)  # flat extrapolation


def test_z_dependence_flags():
    assert not is_z_dependent(Constant(1.0))
    assert is_z_dependent(TanhZ(0.07, 0.02))
    assert is_z_dependent(OUDrift(0.5))
    assert not Affine(0.1, 0.0, 0.2).z_dependent
    assert Affine(0.1, 0.2, 0.0).z_dependent


@settings(max_examples=50, deadline=None)
@given(vals=st.lists(st.floats(-5, 5), min_size=4, max_size=4),
       t=st.floats(-1, 2), z=st.floats(-3, 3))
def test_table_interpolant_stays_within_node_range(vals, t, z):
    tab = Table(np.array([0.0, 1.0]), np.array([-1.0, 1.0]), np.array(vals).reshape(2, 2))
    v = float(tab(t, z))
    assert min(vals) - 1e-12 <= v <= max(vals) + 1e-12
