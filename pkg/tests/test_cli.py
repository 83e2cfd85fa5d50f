import csv
import json
import shutil
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from lifecycle_obpi.cli import main

SMOKE = Path(__file__).resolve().parents[1] / "configs" / "smoke.json"


def _config(tmp_path, **sections):
    raw = json.loads(SMOKE.read_text())
    raw["pde"]["convergence_levels"] = 2
    raw["mc"]["n_paths"] = 2000
    for sec, vals in sections.items():
        raw.setdefault(sec, {}).update(vals)
    p = tmp_path / "run.json"
    p.write_text(json.dumps(raw))
    return p


def _cli(cfg, command, out, *extra):
    return main([command, "--config", str(cfg), "--out", str(out), *extra])


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("pipe")
    cfg = _config(tmp)
    out = tmp / "out"
    codes = {c: _cli(cfg, c, out) for c in ("validate", "solve", "simulate", "price-put", "obpi")}
    return cfg, out, codes


def test_full_pipeline_succeeds(pipeline):
    _, out, codes = pipeline
    assert codes == dict.fromkeys(codes, 0)
    for name in ("dual_grid.csv", "wealth_paths.csv", "put_model.json", "put_quote.csv",
                 "exercise_boundary.csv", "obpi_paths.csv", "obpi_report.csv", "resolved_config.json"):
        assert (out / name).exists(), name
    assert all(r["status"] == "pass" for r in _rows(out / "obpi_report.csv"))
    assert (out / "solve_report_timings.csv").exists()


def test_solve_rerun_is_byte_identical(pipeline, tmp_path):
    cfg, out, _ = pipeline
    before = (out / "dual_grid.csv").read_bytes()
    assert _cli(cfg, "solve", tmp_path, "--threads", "2") == 0
    assert (tmp_path / "dual_grid.csv").read_bytes() == before
    assert (tmp_path / "solve_report.csv").read_bytes() == (out / "solve_report.csv").read_bytes()


def test_corrupted_grid_is_refused(pipeline, tmp_path, capsys):
    cfg, out, _ = pipeline
    work = tmp_path / "copy"
    shutil.copytree(out, work)
    data = (work / "dual_grid.csv").read_bytes()
    (work / "dual_grid.csv").write_bytes(data.replace(b"0.", b"1.", 1))
    assert _cli(cfg, "simulate", work) == 2
    assert "checksum mismatch" in capsys.readouterr().err


def test_changed_config_is_refused(pipeline, tmp_path, capsys):
    cfg, out, _ = pipeline
    work = tmp_path / "copy"
    shutil.copytree(out, work)
    assert _cli(cfg, "simulate", work, "--seed", "7") == 2
    assert "different configuration" in capsys.readouterr().err


def test_obpi_requires_priced_put(pipeline, tmp_path, capsys):
    cfg, out, _ = pipeline
    shutil.copy(out / "dual_grid.csv", tmp_path)
    shutil.copy(out / "dual_grid.csv.meta.json", tmp_path)
    assert _cli(cfg, "obpi", tmp_path) == 2
    assert "run `lifecycle-obpi price-put` first" in capsys.readouterr().err


def test_simulate_requires_solve(tmp_path, capsys):
    assert _cli(_config(tmp_path), "simulate", tmp_path / "o") == 2
    assert "run `lifecycle-obpi solve` first" in capsys.readouterr().err


def test_invalid_jump_size_reported(tmp_path, capsys):
    cfg = _config(tmp_path, market={"gamma": -1.5})
    assert _cli(cfg, "validate", tmp_path / "o") == 1
    out = capsys.readouterr().out
    assert "FAIL" in out and "parameters" in out
    rows = _rows(tmp_path / "o" / "validate_report.csv")
    assert any(r["status"] == "fail" and "gamma" in r["detail"] for r in rows)


def test_missing_table_names_the_key(tmp_path, capsys):
    cfg = _config(tmp_path, mortality={"mu": {"kind": "table", "path": "absent.csv"}})
    assert _cli(cfg, "validate", tmp_path / "o") == 2
    err = capsys.readouterr().err
    assert "mortality.mu" in err and "absent.csv" in err


def test_bad_override_rejected(tmp_path, capsys):
    assert _cli(_config(tmp_path), "validate", tmp_path / "o", "--paths", "0") == 2
    assert "--paths" in capsys.readouterr().err


def test_z_independent_market_gives_flat_grid(pipeline):
    _, out, _ = pipeline
    rows = np.array([[float(v) for v in r.values()] for r in _rows(out / "dual_grid.csv")])
    for t in np.unique(rows[:, 0]):
        h = rows[rows[:, 0] == t, 2]
        assert np.ptp(h) <= 1e-10 * max(1.0, np.abs(h).max())


def test_console_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "lifecycle_obpi.cli", "validate", "--config",
                          str(_config(tmp_path)), "--out", str(tmp_path / "o")],
                         capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    assert "validate: ok" in res.stdout
