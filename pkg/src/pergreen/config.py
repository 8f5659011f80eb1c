"""Run configuration for the command-line front end.

A config is a YAML (or JSON) mapping::

    field:  {dim: 3, kind: layered, mean: 2.0, modes: [[1.0, 1, 0.0]]}
    grid:   {d: 3, N: 64}
    n:      [1, 2, 4]
    solver: {tol: 1.0e-10, max_iter: null}
    green:     {sources: [[0, 0, 0]], derivatives: false}
    decompose: {x: [...], y: [...], m_max: 3, source: analytic, L: null, h: null,
                quadrature: {order: 8, depth: 12, eta: 0.5}, direct_check: true}
    estimate:  {quantities: [value, grad_x, grad_y, mixed], window: [null, 0.25],
                spread_threshold: 2.0, source: [0, 0, 0]}
    shells:    {m_max: 5, m_min: 0, tensor: null}

``field`` and ``grid`` are required; the task blocks are optional and filled
with defaults.  Validation happens entirely in :func:`load_config`, before any
computation, and raises :class:`ConfigError`.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .coeff_fields import FieldError, make_field
from .estimates import QUANTITIES
from .torus import MIN_POINTS_PER_PERIOD


class ConfigError(ValueError):
    pass


@dataclass
class SolverConfig:
    tol: float = 1e-10
    max_iter: int | None = None


@dataclass
class GreenConfig:
    sources: list = field(default_factory=list)
    derivatives: bool = False


@dataclass
class QuadratureConfig:
    order: int = 8
    depth: int = 12
    eta: float = 0.5


@dataclass
class DecomposeConfig:
    x: list | None = None
    y: list | None = None
    m_max: int = 3
    source: str = "analytic"  # analytic | window
    L: int | None = None
    h: float | None = None
    quadrature: QuadratureConfig = field(default_factory=QuadratureConfig)
    direct_check: bool = True


@dataclass
class EstimateConfig:
    quantities: list = field(default_factory=lambda: list(QUANTITIES))
    window: list = field(default_factory=lambda: [None, 0.25])
    spread_threshold: float = 2.0
    source: list | None = None


@dataclass
class ShellsConfig:
    m_max: int = 5
    m_min: int = 0
    tensor: list | None = None


@dataclass
class RunConfig:
    field: dict
    d: int
    N: int
    n: list = field(default_factory=lambda: [1])
    solver: SolverConfig = field(default_factory=SolverConfig)
    green: GreenConfig = field(default_factory=GreenConfig)
    decompose: DecomposeConfig = field(default_factory=DecomposeConfig)
    estimate: EstimateConfig = field(default_factory=EstimateConfig)
    shells: ShellsConfig = field(default_factory=ShellsConfig)
    source_path: str | None = None

    def resolved(self) -> dict:
        out = asdict(self)
        out["grid"] = {"d": out.pop("d"), "N": out.pop("N")}
        return out

    def make_field(self):
        spec = dict(self.field)
        base = Path(self.source_path).parent if self.source_path else Path.cwd()
        if "path" in spec:
            spec["path"] = str((base / spec["path"]).resolve())
        return make_field(spec)


def _block(raw: dict, key: str, cls, nested: dict | None = None):
    data = raw.get(key) or {}
    if not isinstance(data, dict):
        raise ConfigError(f"'{key}' must be a mapping")
    names = set(cls.__dataclass_fields__)
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown keys in '{key}': {sorted(unknown)}")
    data = dict(data)
    for sub, subcls in (nested or {}).items():
        data[sub] = _block(data, sub, subcls)
    try:
        return cls(**data)
    except TypeError as exc:
        raise ConfigError(f"bad '{key}' block: {exc}") from None


def _vector(v, d: int, name: str):
    if v is None:
        return None
    a = np.asarray(v, dtype=float)
    if a.shape != (d,) or not np.all(np.isfinite(a)):
        raise ConfigError(f"{name} must be a finite vector of length {d}")
    return a.tolist()


def parse_config(raw: dict, source_path: str | None = None) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    allowed = {"field", "grid", "n", "solver", "green", "decompose", "estimate", "shells", "task"}
    unknown = set(raw) - allowed
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    for key in ("field", "grid"):
        if key not in raw:
            raise ConfigError(f"missing required block '{key}'")
    grid = raw["grid"]
    if not isinstance(grid, dict) or "d" not in grid or "N" not in grid:
        raise ConfigError("grid block needs 'd' and 'N'")
    d, N = int(grid["d"]), int(grid["N"])
    if d not in (2, 3):
        raise ConfigError(f"grid dimension must be 2 or 3, got {d}")
    if N < 4:
        raise ConfigError(f"grid N must be >= 4, got {N}")
    fld = raw["field"]
    if not isinstance(fld, dict):
        raise ConfigError("field block must be a mapping")
    fld = dict(fld)
    fld.setdefault("dim", d)
    if int(fld["dim"]) != d:
        raise ConfigError(f"field dim {fld['dim']} does not match grid d={d}")
    n_list = raw.get("n", [1])
    n_list = [n_list] if isinstance(n_list, int) else list(n_list)
    if not n_list:
        raise ConfigError("n list is empty")
    if any(int(n) != n or n < 1 for n in n_list):
        raise ConfigError(f"n values must be positive integers, got {n_list}")
    n_list = [int(n) for n in n_list]
    if N < MIN_POINTS_PER_PERIOD * max(n_list):
        raise ConfigError(f"N={N} does not resolve n={max(n_list)} "
                          f"(need N >= {MIN_POINTS_PER_PERIOD * max(n_list)})")
    cfg = RunConfig(fld, d, N, n_list,
                    _block(raw, "solver", SolverConfig),
                    _block(raw, "green", GreenConfig),
                    _block(raw, "decompose", DecomposeConfig, {"quadrature": QuadratureConfig}),
                    _block(raw, "estimate", EstimateConfig),
                    _block(raw, "shells", ShellsConfig),
                    source_path)
    if not cfg.solver.tol > 0:
        raise ConfigError("solver tol must be positive")
    if cfg.solver.max_iter is not None and int(cfg.solver.max_iter) < 1:
        raise ConfigError("solver max_iter must be >= 1")
    cfg.green.sources = [_vector(s, d, "green source") for s in cfg.green.sources]
    dc = cfg.decompose
    dc.x, dc.y = _vector(dc.x, d, "decompose.x"), _vector(dc.y, d, "decompose.y")
    if dc.source not in ("analytic", "window"):
        raise ConfigError(f"decompose.source must be 'analytic' or 'window', got {dc.source!r}")
    if dc.m_max < 0:
        raise ConfigError("decompose.m_max must be >= 0")
    if dc.source == "window" and (dc.L is None or dc.h is None):
        raise ConfigError("a windowed decomposition needs L and h")
    es = cfg.estimate
    bad = [q for q in es.quantities if q not in QUANTITIES]
    if bad or not es.quantities:
        raise ConfigError(f"estimate.quantities must be a non-empty subset of {QUANTITIES}")
    if len(es.window) != 2:
        raise ConfigError("estimate.window must be [r_min, r_max]")
    es.source = _vector(es.source, d, "estimate.source")
    sh = cfg.shells
    if sh.m_min < 0 or sh.m_max < max(2, sh.m_min):
        raise ConfigError("shells needs 0 <= m_min <= m_max and m_max >= 2")
    if sh.tensor is not None:
        T = np.asarray(sh.tensor, dtype=float)
        if T.shape != (d, d):
            raise ConfigError(f"shells.tensor must be {d}x{d}")
        S = 0.5 * (T + T.T)
        if np.linalg.eigvalsh(S).min() <= 0:
            raise ConfigError("shells.tensor is not positive definite")
    try:
        cfg.make_field()
    except (FieldError, OSError, KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid field: {exc}") from None
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        raw = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    return parse_config(raw, str(path.resolve()))
