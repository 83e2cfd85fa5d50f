"""Coefficient families for the market, mortality, income and preference inputs.

All coefficients are callables ``f(t, z=0.0)`` that broadcast over numpy
arrays.  Purely time-dependent inputs (r, lambda, mu, ell, rho) simply ignore
``z``.  ``z_dependent`` lets solvers detect the one-dimensional reduction.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class ConfigError(ValueError):
    """Raised for unreadable or inconsistent run configurations."""


def _shape(t, z):
    return np.broadcast(np.asarray(t, dtype=float), np.asarray(z, dtype=float)).shape


@dataclass(frozen=True)
class Constant:
    value: float
    z_dependent: bool = field(default=False, init=False)

    def __call__(self, t, z=0.0):
        return np.full(_shape(t, z), float(self.value))


@dataclass(frozen=True)
class Affine:
    """a + b*z + c*t"""

    a: float
    b: float = 0.0
    c: float = 0.0

    @property
    def z_dependent(self) -> bool:
        return self.b != 0.0

    def __call__(self, t, z=0.0):
        t = np.asarray(t, dtype=float)
        z = np.asarray(z, dtype=float)
        return self.a + self.b * z + self.c * t + np.zeros(_shape(t, z))


@dataclass(frozen=True)
class TanhZ:
    """a + b*tanh(z/scale); bounded and Lipschitz in z."""

    a: float
    b: float
    scale: float = 1.0

    @property
    def z_dependent(self) -> bool:
        return self.b != 0.0

    def __call__(self, t, z=0.0):
        z = np.asarray(z, dtype=float)
        return self.a + self.b * np.tanh(z / self.scale) + np.zeros(_shape(t, z))


@dataclass(frozen=True)
class OUDrift:
    """speed*(mean - z); Lipschitz drift for the economic factor."""

    speed: float
    mean: float = 0.0

    @property
    def z_dependent(self) -> bool:
        return self.speed != 0.0

    def __call__(self, t, z=0.0):
        z = np.asarray(z, dtype=float)
        return self.speed * (self.mean - z) + np.zeros(_shape(t, z))


@dataclass(frozen=True)
class PowerZ:
    """a + b*z**power -- mainly useful to exercise the growth-condition check."""

    a: float
    b: float
    power: float = 2.0

    @property
    def z_dependent(self) -> bool:
        return self.b != 0.0

    def __call__(self, t, z=0.0):
        z = np.asarray(z, dtype=float)
        return self.a + self.b * np.abs(z) ** self.power + np.zeros(_shape(t, z))


@dataclass(frozen=True, eq=False)
class Table:
    """Bilinear interpolation on a rectangular (t, z) table, flat extrapolation.

    A table with a single z node is a function of time only.
    """

    t_nodes: np.ndarray
    z_nodes: np.ndarray
    values: np.ndarray  # shape (len(t_nodes), len(z_nodes))
    source: str = ""

    @property
    def z_dependent(self) -> bool:
        return len(self.z_nodes) > 1

    def __call__(self, t, z=0.0):
        t = np.asarray(t, dtype=float)
        z = np.asarray(z, dtype=float)
        shape = _shape(t, z)
        t = np.broadcast_to(t, shape).ravel()
        z = np.broadcast_to(z, shape).ravel()
        ti, tw = _bracket(self.t_nodes, t)
        if len(self.z_nodes) == 1:
            v = self.values[:, 0]
            out = (1 - tw) * v[ti] + tw * v[ti + 1] if len(self.t_nodes) > 1 else np.full(t.shape, v[0])
            return out.reshape(shape)
        zi, zw = _bracket(self.z_nodes, z)
        if len(self.t_nodes) == 1:
            v = self.values[0]
            return ((1 - zw) * v[zi] + zw * v[zi + 1]).reshape(shape)
        v = self.values
        out = ((1 - tw) * (1 - zw) * v[ti, zi] + tw * (1 - zw) * v[ti + 1, zi]
               + (1 - tw) * zw * v[ti, zi + 1] + tw * zw * v[ti + 1, zi + 1])
        return out.reshape(shape)

    @classmethod
    def from_csv(cls, path: str | Path, key: str = "") -> "Table":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"{key or 'table'}: CSV table not found: {path}")
        rows = []
        with path.open(newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            cols = set(reader.fieldnames or [])
            if not {"t", "value"} <= cols:
                raise ConfigError(f"{key}: table {path} needs columns t,[z,]value")
            for row in reader:
                rows.append((float(row["t"]), float(row.get("z") or 0.0), float(row["value"])))
        if not rows:
            raise ConfigError(f"{key}: table {path} is empty")
        ts = np.unique([r[0] for r in rows])
        zs = np.unique([r[1] for r in rows])
        vals = np.full((len(ts), len(zs)), np.nan)
        for t, z, v in rows:
            vals[np.searchsorted(ts, t), np.searchsorted(zs, z)] = v
        if np.isnan(vals).any():
            raise ConfigError(f"{key}: table {path} is not a full rectangular (t, z) grid")
        return cls(ts, zs, vals, source=str(path))


def _bracket(nodes: np.ndarray, x: np.ndarray):
    if len(nodes) == 1:
        return np.zeros(x.shape, dtype=int), np.zeros(x.shape)
    x = np.clip(x, nodes[0], nodes[-1])
    i = np.clip(np.searchsorted(nodes, x, side="right") - 1, 0, len(nodes) - 2)
    w = (x - nodes[i]) / (nodes[i + 1] - nodes[i])
    return i, w


def is_z_dependent(f) -> bool:
    return bool(getattr(f, "z_dependent", True))


def from_config(spec, key: str, base_dir: Path | None = None):
    """Build a coefficient from a config value: a number or a ``{"kind": ...}`` block."""
    if isinstance(spec, (int, float)) and not isinstance(spec, bool):
        return Constant(float(spec))
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ConfigError(f"{key}: expected a number or an object with 'kind', got {spec!r}")
    kind = spec["kind"]
    args = {k: v for k, v in spec.items() if k != "kind"}
    try:
        if kind == "constant":
            return Constant(float(args["value"]))
        if kind == "affine":
            return Affine(float(args.get("a", 0.0)), float(args.get("b", 0.0)), float(args.get("c", 0.0)))
        if kind == "tanh":
            return TanhZ(float(args["a"]), float(args["b"]), float(args.get("scale", 1.0)))
        if kind == "ou":
            return OUDrift(float(args["speed"]), float(args.get("mean", 0.0)))
        if kind == "power":
            return PowerZ(float(args.get("a", 0.0)), float(args["b"]), float(args.get("power", 2.0)))
        if kind == "table":
            if "path" not in args:
                raise ConfigError(f"{key}: table coefficient needs 'path'")
            p = Path(args["path"])
            if base_dir is not None and not p.is_absolute():
                p = base_dir / p
            return Table.from_csv(p, key=key)
    except KeyError as exc:
        raise ConfigError(f"{key}: missing field {exc.args[0]!r} for kind {kind!r}") from None
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{key}: invalid value for kind {kind!r}: {exc}") from None
    raise ConfigError(f"{key}: unknown coefficient kind {kind!r}")


def to_config(f) -> object:
    """Inverse of :func:`from_config` for the built-in families (used for hashing)."""
    if isinstance(f, Constant):
        return f.value
    if isinstance(f, Affine):
        return {"kind": "affine", "a": f.a, "b": f.b, "c": f.c}
    if isinstance(f, TanhZ):
        return {"kind": "tanh", "a": f.a, "b": f.b, "scale": f.scale}
    if isinstance(f, OUDrift):
        return {"kind": "ou", "speed": f.speed, "mean": f.mean}
    if isinstance(f, PowerZ):
        return {"kind": "power", "a": f.a, "b": f.b, "power": f.power}
    if isinstance(f, Table):
        return {"kind": "table", "path": f.source}
    return repr(f)
