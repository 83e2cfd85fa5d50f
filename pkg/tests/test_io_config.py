import json

import numpy as np
import pytest

from lifecycle_obpi.coefficients import ConfigError, Table
from lifecycle_obpi.config import DEFAULTS, build_config, config_hash, load_config
from lifecycle_obpi.dual import solve_dual
from lifecycle_obpi.io import (ChecksumMismatch, ConfigHashMismatch, MissingArtifact, atomic_write, csv_bytes,
                               dual_grid_bytes, dual_grid_from_bytes, fmt, read_artifact, write_artifact)


def test_atomic_write_replaces_and_leaves_no_temp_files(tmp_path):
    p = tmp_path / "sub" / "a.csv"
    atomic_write(p, b"one")
    atomic_write(p, b"two")
    assert p.read_bytes() == b"two"
    assert sorted(x.name for x in p.parent.iterdir()) == ["a.csv"]


def test_float_formatting_round_trips():
    for x in (0.1, 1 / 3, 1e-300, -2.5e17, np.float64(np.pi)):
        assert float(fmt(x)) == float(x)
    assert fmt(np.int64(3)) == "3" and fmt(True) == "1"
    assert csv_bytes(["a", "b"], [(1, 0.5)]) == b"a,b\n1,0.5\n"


def test_artifact_checksum_and_hash(tmp_path):
    p = tmp_path / "x.csv"
    write_artifact(p, b"a,b\n1,2\n", "h1", {"note": 1})
    data, meta = read_artifact(p, "h1")
    assert data == b"a,b\n1,2\n" and meta["info"] == {"note": 1}
    with pytest.raises(ConfigHashMismatch):
        read_artifact(p, "h2")
    p.write_bytes(b"a,b\n1,3\n")
    with pytest.raises(ChecksumMismatch):
        read_artifact(p, "h1")


def test_missing_artifact_names_the_producer(tmp_path):
    with pytest.raises(MissingArtifact, match="run `lifecycle-obpi solve` first"):
        read_artifact(tmp_path / "dual_grid.csv", producer="lifecycle-obpi solve")


def test_dual_grid_round_trip(model):
    sol = solve_dual(model, 20, 20)
    back = dual_grid_from_bytes(dual_grid_bytes(sol.grid))
    assert np.array_equal(back.t, sol.grid.t) and np.array_equal(back.z, sol.grid.z)
    assert np.array_equal(back.h, sol.grid.h) and np.array_equal(back.psi_hat, sol.grid.psi_hat)


def test_hash_ignores_threads_and_output_location():
    a = build_config({})
    b = build_config({"mc": {"threads": 4}, "output": {"dir": "/elsewhere", "export_paths": 3}})
    c = build_config({"mc": {"seed": 1}})
    assert a.config_hash == b.config_hash != c.config_hash
    assert len(a.config_hash) == 64


def test_hash_tracks_table_contents(tmp_path):
    tab = tmp_path / "mu.csv"
    tab.write_text("t,value\n0,0.01\n10,0.02\n")
    raw = {"mortality": {"mu": {"kind": "table", "path": "mu.csv"}}}
    h1 = build_config(raw, tmp_path).config_hash
    tab.write_text("t,value\n0,0.01\n10,0.03\n")
    cfg = build_config(raw, tmp_path)
    assert cfg.config_hash != h1
    assert isinstance(cfg.model.mortality.mu, Table)
    assert cfg.model.mortality.mu(5.0) == pytest.approx(0.02)


@pytest.mark.parametrize("raw,key", [
    ({"market": {"sigma": {"kind": "table", "path": "nope.csv"}}}, "market.sigma"),
    ({"market": {"beta": "x"}}, "market.beta"),
    ({"income": {"ell": {"kind": "spline"}}}, "income.ell"),
    ({"market": {"gamma": {"kind": "tanh", "a": 0.1}}}, "market.gamma"),
    ({"market": {"alpha": {"kind": "ou", "speed": "fast"}}}, "market.alpha"),
])
def test_config_errors_name_the_key(tmp_path, raw, key):
    with pytest.raises(ConfigError, match=key.replace(".", r"\.")):
        build_config(raw, tmp_path)


def test_grid_divisibility_enforced():
    with pytest.raises(ConfigError, match="multiple"):
        build_config({"mc": {"n_steps": 101}})


def test_load_config_errors(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    with pytest.raises(ConfigError, match="not valid JSON"):
        load_config(bad)


def test_overrides_and_relative_output(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"output": {"dir": "runs"}}))
    cfg = load_config(p, {"mc": {"n_paths": 17}})
    assert cfg.mc["n_paths"] == 17 and cfg.mc["seed"] == DEFAULTS["mc"]["seed"]
    assert cfg.out_dir == tmp_path / "runs"
    assert config_hash(cfg.raw, cfg.tables) == cfg.config_hash
