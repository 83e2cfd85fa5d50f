"""Artifact files: atomic writes, CSV formatting, checksums and config hashes.

Every artifact ``name.csv`` (or ``.json``) has a sidecar ``name.csv.meta.json``
holding the producing config hash and the sha256 of the artifact bytes.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import tempfile
from pathlib import Path

import numpy as np


class ArtifactError(RuntimeError):
    pass


class ChecksumMismatch(ArtifactError):
    pass


class ConfigHashMismatch(ArtifactError):
    pass


class MissingArtifact(ArtifactError):
    pass


def atomic_write(path: Path | str, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def fmt(x) -> str:
    """Shortest round-trip representation; '.' decimal separator regardless of locale."""
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def csv_bytes(header, rows) -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    return buf.getvalue().encode("utf-8")


def sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def write_artifact(path: Path | str, data: bytes, cfg_hash: str, extra: dict | None = None) -> None:
    path = Path(path)
    atomic_write(path, data)
    meta = {"config_hash": cfg_hash, "sha256": sha256(data)}
    if extra:
        meta["info"] = extra
    atomic_write(meta_path(path), json.dumps(meta, sort_keys=True, indent=1).encode("utf-8"))


def meta_path(path: Path) -> Path:
    return path.with_name(path.name + ".meta.json")


def read_artifact(path: Path | str, cfg_hash: str | None = None, producer: str = "") -> tuple[bytes, dict]:
    """Read an artifact, verifying its checksum and (optionally) its config hash."""
    path = Path(path)
    if not path.exists() or not meta_path(path).exists():
        hint = f"; run `{producer}` first" if producer else ""
        raise MissingArtifact(f"artifact {path} not found{hint}")
    data = path.read_bytes()
    meta = json.loads(meta_path(path).read_text(encoding="utf-8"))
    if sha256(data) != meta.get("sha256"):
        raise ChecksumMismatch(f"checksum mismatch for {path}: file was modified or corrupted")
    if cfg_hash is not None and meta.get("config_hash") != cfg_hash:
        raise ConfigHashMismatch(f"{path} was produced from a different configuration "
                                 f"({meta.get('config_hash', '?')[:12]} != {cfg_hash[:12]})")
    return data, meta


def read_csv(data: bytes) -> tuple[list[str], list[list[str]]]:
    rows = list(csv.reader(io.StringIO(data.decode("utf-8"))))
    return rows[0], rows[1:]


# ---------------------------------------------------------------------------
# dual grid

def dual_grid_bytes(grid) -> bytes:
    rows = ((t, z, grid.h[i, j], grid.psi_hat[i, j])
            for i, t in enumerate(grid.t) for j, z in enumerate(grid.z))
    return csv_bytes(["t", "z", "h", "psi_hat"], rows)


def dual_grid_from_bytes(data: bytes, metadata: dict | None = None):
    from .dual import DualGrid

    _, rows = read_csv(data)
    arr = np.array(rows, dtype=float)
    t = np.unique(arr[:, 0])
    z = np.unique(arr[:, 1])
    h = arr[:, 2].reshape(len(t), len(z))
    psi = arr[:, 3].reshape(len(t), len(z))
    return DualGrid(t, z, h, psi, 0, dict(metadata or {}))


# ---------------------------------------------------------------------------
# put model (regression coefficients and boundary), as JSON

def _fit_to_dict(fit):
    if fit is None:
        return None
    return {"active": list(fit.active), "means": fit.means.tolist(), "stds": fit.stds.tolist(),
            "exponents": fit.exponents.tolist(), "coef": fit.coef.tolist()}


def _fit_from_dict(d):
    from .american_put import RegressionFit

    if d is None:
        return None
    n_act = len(d["active"])
    exps = np.array(d["exponents"], dtype=int).reshape(len(d["exponents"]), n_act)
    return RegressionFit(tuple(d["active"]), np.array(d["means"], float), np.array(d["stds"], float),
                         exps, np.array(d["coef"], float))


def _arr(a):
    return None if a is None else np.where(np.isnan(a), None, a).tolist()


def put_model_bytes(quote, fraction) -> bytes:
    b = quote.boundary
    c = quote.curves
    doc = {
        "price": quote.price, "se": quote.se, "european": quote.european, "european_se": quote.european_se,
        "intrinsic0": quote.intrinsic0, "scale": quote.scale, "degree": quote.degree, "x0": quote.x0,
        "rho0": fraction.rho0, "gap": fraction.gap, "passes": fraction.passes, "mode": fraction.mode,
        "times": c.times.tolist(), "growth": c.growth.tolist(), "income_accrual": c.income_accrual.tolist(),
        "g": c.g.tolist(), "disc": c.disc.tolist(),
        "value_fits": [_fit_to_dict(f) for f in quote.value_fits], "t0_fit": _fit_to_dict(quote.t0_fit),
        "boundary": None if b is None else {"d_edges": b.d_edges.tolist(), "b": _arr(b.b)},
    }
    return json.dumps(doc, sort_keys=True, indent=1, allow_nan=False).encode("utf-8")


def put_model_from_bytes(data: bytes, spec):
    """Rebuild a PutQuote sufficient for forward valuation plus the fraction solution."""
    from .american_put import BoundaryEstimate, GuaranteeCurves, PutQuote
    from .obpi import FractionSolution

    d = json.loads(data.decode("utf-8"))
    times = np.array(d["times"])
    curves = GuaranteeCurves(times, np.array(d["growth"]), np.array(d["income_accrual"]),
                             np.array(d["g"]), np.array(d["disc"]))
    bnd = None
    if d["boundary"] is not None:
        bb = np.array([[np.nan if v is None else v for v in row] for row in d["boundary"]["b"]], dtype=float)
        bnd = BoundaryEstimate(times, np.array(d["boundary"]["d_edges"]), bb)
    q = PutQuote(d["price"], d["se"], d["european"], d["european_se"], d["intrinsic0"], times,
                 np.zeros((len(times), 0), dtype=bool), None, None, None, None, curves.g,
                 [_fit_from_dict(f) for f in d["value_fits"]], curves, spec, d["x0"], d["degree"],
                 _fit_from_dict(d["t0_fit"]), d["scale"], bnd)
    frac = FractionSolution(d["rho0"], d["gap"], q, [tuple(p) for p in d["passes"]], d["mode"])
    return q, frac
