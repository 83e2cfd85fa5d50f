"""Acceptance suite on the desk-scale reference configuration.

Runs ``verify`` twice into separate directories (about five minutes on one
core) and prints one PASS/FAIL line per criterion.
"""

from pathlib import Path

import pytest

from lifecycle_obpi.checks import CHECK_NAMES
from lifecycle_obpi.config import load_config
from lifecycle_obpi.pipeline import cmd_verify

REFERENCE = Path(__file__).resolve().parents[1] / "configs" / "reference.json"


def _verify(out: Path):
    cfg = load_config(REFERENCE, {"output": {"dir": str(out)}})
    rep = cmd_verify(cfg)
    return rep, (out / "verify_report.csv").read_bytes()


@pytest.fixture(scope="module")
def first(tmp_path_factory):
    return _verify(tmp_path_factory.mktemp("verify_a"))


@pytest.fixture(scope="module")
def second(tmp_path_factory):
    return _verify(tmp_path_factory.mktemp("verify_b"))


def _announce(capsys, number, name, passed, text):
    with capsys.disabled():
        print(f"\n[{'PASS' if passed else 'FAIL'}] criterion {number:2d} {name}: {text}")


def test_reference_desk_values():
    cfg = load_config(REFERENCE)
    mk, m = cfg.model.market, cfg.model
    assert (mk.r(0.0), mk.alpha(0.0), mk.beta(0.0), mk.sigma(0.0), mk.gamma(0.0), mk.lam(0.0)) == \
        (0.03, 0.07, 0.2, 0.1, -0.1, 1.0)
    assert (m.mortality.mu(0.0), m.income.ell(0.0), m.prefs.rho(0.0), m.prefs.kappa, m.prefs.delta) == \
        (0.01, 1.0, 0.02, 0.05, 0.5)
    assert (m.T, mk.x0, mk.corr) == (10.0, 10.0, 0.0)
    assert (cfg.pde["n_t"], cfg.pde["n_z"], cfg.mc["n_steps"], cfg.mc["n_paths"]) == (200, 200, 500, 100000)


@pytest.mark.parametrize("number,name", list(enumerate(CHECK_NAMES[:-1], start=1)))
def test_criterion(first, capsys, number, name):
    rep, _ = first
    rows = [r for r in rep.rows if r.name == name]
    assert len(rows) == 1
    r = rows[0]
    _announce(capsys, number, name, r.passed,
              f"statistic={r.statistic:.6g} tolerance={r.tolerance:.6g} {r.detail}")
    assert r.passed, r.detail


def test_criterion_determinism(first, second, capsys):
    rep, data_a = first
    _, data_b = second
    own = [r for r in rep.rows if r.name == "determinism"][0]
    same = data_a == data_b
    _announce(capsys, len(CHECK_NAMES), "determinism", same and own.passed,
              f"verify reports identical={same} ({len(data_a)} bytes); {own.detail}")
    assert own.passed
    assert same


def test_every_check_reported_once(first):
    rep, _ = first
    assert [r.name for r in rep.rows] == list(CHECK_NAMES)
