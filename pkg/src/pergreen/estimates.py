"""Decay exponents and constants of periodic Green functions and their derivatives.

Magnitudes at a radius r are maxima over a fixed stencil of directions (the
26 neighbours in 3D, 8 in 2D), with the tables interpolated multilinearly at
the exact points y + r * direction.  Derivatives come from
``green.derivative_tables``.

For the value itself the periodic kernel carries an additive constant of
order one (the zero-mean normalization), which swamps a pure power law on
r <= 1/4.  Value fits therefore use the increments
max_dir |G(y + r dir) - G(y + 2 r dir)| ~ C (1 - 2^p) r^p on r in [4h, 1/8],
which cancel the constant; the plain log-log fit of |G| is reported alongside.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from itertools import product
from pathlib import Path

import numpy as np

from .coeff_fields import CoefficientField
from .green import GreenTable, derivative_tables
from .interp import multilinear
from .torus import DEFAULT_TOL, MIN_POINTS_PER_PERIOD, ResolutionError, TorusGrid

QUANTITIES = ("value", "grad_x", "grad_y", "mixed")


class FitError(ValueError):
    pass


def target_exponent(quantity: str, d: int) -> float:
    return {"value": 2 - d, "grad_x": 1 - d, "grad_y": 1 - d, "mixed": -d}[quantity]


def directions(d: int) -> np.ndarray:
    v = np.array([p for p in product((-1, 0, 1), repeat=d) if any(p)], dtype=float)
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _components(tabs: dict, quantity: str) -> list[np.ndarray]:
    arr = tabs[quantity]
    if quantity == "value":
        return [arr]
    return list(arr.reshape((-1,) + arr.shape[-tabs["value"].ndim:]))


def default_radii(grid: TorusGrid, quantity: str = "grad_x", r_min: float | None = None,
                  r_max: float = 0.25, count: int = 10) -> np.ndarray:
    """Geometric radii in [r_min, r_max]; value increments stop at r_max / 2."""
    r_min = 4 * grid.h if r_min is None else r_min
    if quantity == "value":
        r_max = r_max / 2
    if r_max <= r_min:
        raise FitError(f"empty fit window [{r_min}, {r_max}]")
    return np.geomspace(r_min, r_max, count)


def sample_magnitude(tabs: dict, quantity: str, grid: TorusGrid, y, radii) -> np.ndarray:
    """max over the direction stencil of |quantity| (value: of its increment r -> 2r)."""
    dirs = directions(grid.dim)
    y = np.asarray(y, dtype=float)
    comps = _components(tabs, quantity)
    out = np.empty(len(radii))
    for i, r in enumerate(radii):
        if quantity == "value":
            v = comps[0]
            inc = multilinear(v, y + r * dirs) - multilinear(v, y + 2 * r * dirs)
            out[i] = np.abs(inc).max()
        else:
            sq = sum(multilinear(c, y + r * dirs) ** 2 for c in comps)
            out[i] = np.sqrt(sq).max()
    return out


def raw_value_magnitude(tabs: dict, grid: TorusGrid, y, radii) -> np.ndarray:
    dirs = directions(grid.dim)
    y = np.asarray(y, dtype=float)
    return np.array([np.abs(multilinear(tabs["value"], y + r * dirs)).max() for r in radii])


def _loglog(r, M):
    A = np.stack([np.log(r), np.ones_like(r)], 1)
    coef, *_ = np.linalg.lstsq(A, np.log(M), rcond=None)
    return float(coef[0]), float(np.exp(coef[1]))


def _constant_at(r, M, p: float, quantity: str) -> float:
    C = float(np.exp(np.mean(np.log(M) - p * np.log(r))))
    return C / abs(1 - 2.0**p) if quantity == "value" else C


@dataclass
class GreenFamily:
    """Derivative tables of G_n(., y) for several n on one grid."""

    field: CoefficientField
    grid: TorusGrid
    y: np.ndarray
    tables: dict  # n -> derivative_tables(...) dict

    @property
    def n_list(self) -> list[int]:
        return sorted(self.tables)


def green_family(field_: CoefficientField, grid: TorusGrid, n_list, y=None,
                 tol: float = DEFAULT_TOL, jobs: int = 1) -> GreenFamily:
    n_list = [int(n) for n in n_list]
    if not n_list:
        raise FitError("empty n list")
    if grid.N < MIN_POINTS_PER_PERIOD * max(n_list):
        raise ResolutionError(f"N={grid.N} does not resolve n={max(n_list)}; need N >= "
                              f"{MIN_POINTS_PER_PERIOD * max(n_list)}")
    y = np.zeros(grid.dim) if y is None else np.asarray(y, dtype=float)
    return GreenFamily(field_, grid, y,
                       {n: derivative_tables(field_, n, grid, y, tol, jobs) for n in n_list})


@dataclass
class DecayFit:
    quantity: str
    r: np.ndarray
    magnitudes: dict  # n -> array over r
    p_hat: dict  # n -> fitted exponent
    C_hat: dict  # n -> fitted constant
    p_pooled: float  # one log-log fit through the samples of every n
    C_pooled: float
    window: tuple
    n_list: list
    p_raw: dict = field(default_factory=dict)  # plain log-log fit of |G| (value only)

    def summary(self) -> dict:
        return {"quantity": self.quantity, "p_hat": self.p_pooled, "C_pooled": self.C_pooled,
                "p_hat_per_n": {str(n): v for n, v in self.p_hat.items()},
                "C_hat": {str(n): v for n, v in self.C_hat.items()},
                "p_raw_per_n": {str(n): v for n, v in self.p_raw.items()},
                "window": list(self.window)}


def decay_fit(family: GreenFamily, quantity: str, r_min: float | None = None,
              r_max: float = 0.25, count: int = 10) -> DecayFit:
    """Exponent and constant of the stencil maximum of |quantity| ~ C r^p."""
    if quantity not in QUANTITIES:
        raise FitError(f"unknown quantity {quantity!r}")
    if count < 8:
        raise FitError(f"at least 8 radii are needed, got {count}")
    grid = family.grid
    if (r_min is not None and r_min < 4 * grid.h - 1e-12) or r_max > 0.25 + 1e-12:
        raise FitError("the fit window must lie in [4h, 1/4]")
    radii = default_radii(grid, quantity, r_min, r_max, count)
    mags, p_hat, C_hat, p_raw = {}, {}, {}, {}
    for n in family.n_list:
        M = sample_magnitude(family.tables[n], quantity, grid, family.y, radii)
        mags[n] = M
        p_hat[n], C_hat[n] = _loglog(radii, M)
        if quantity == "value":
            C_hat[n] /= abs(1 - 2.0 ** p_hat[n])
            rr = default_radii(grid, "grad_x", r_min, r_max, count)
            p_raw[n] = _loglog(rr, raw_value_magnitude(family.tables[n], grid, family.y, rr))[0]
    p_pool, C_pool = _loglog(np.tile(radii, len(family.n_list)),
                             np.concatenate([mags[n] for n in family.n_list]))
    if quantity == "value":
        C_pool /= abs(1 - 2.0**p_pool)
    return DecayFit(quantity, radii, mags, p_hat, C_hat, p_pool, C_pool,
                    (float(radii[0]), float(radii[-1])), family.n_list, p_raw)


@dataclass
class UniformityReport:
    quantity: str
    exponent: float
    C_hat: dict
    spread: float

    def summary(self) -> dict:
        return {"quantity": self.quantity, "exponent": self.exponent,
                "C_hat": {str(n): v for n, v in self.C_hat.items()}, "spread": self.spread}


def uniformity_from_family(family: GreenFamily, quantity: str,
                           r_min: float | None = None, r_max: float = 0.25) -> UniformityReport:
    grid = family.grid
    radii = default_radii(grid, quantity, r_min, r_max)
    p = float(target_exponent(quantity, grid.dim))
    C = {n: _constant_at(radii, sample_magnitude(family.tables[n], quantity, grid, family.y,
                                                 radii), p, quantity)
         for n in family.n_list}
    vals = np.array(list(C.values()))
    return UniformityReport(quantity, p, C, float(vals.max() / vals.min()))


def uniformity_report(field_: CoefficientField, grid: TorusGrid, n_list, quantity: str,
                      y=None, tol: float = DEFAULT_TOL, jobs: int = 1) -> UniformityReport:
    """Constants C_n at the fixed exponent for each n, and their spread max/min."""
    return uniformity_from_family(green_family(field_, grid, n_list, y, tol, jobs), quantity)


def write_fit_csv(fits: list[DecayFit], path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["quantity", "n", "r", "magnitude"])
        for f in fits:
            for n in f.n_list:
                for r, m in zip(f.r, f.magnitudes[n]):
                    w.writerow([f.quantity, n, f"{r:.17g}", f"{m:.17g}"])
    return path


def write_summary(fits: list[DecayFit], reports: list[UniformityReport], path) -> Path:
    path = Path(path)
    spreads = {r.quantity: r for r in reports}
    out = []
    for f in fits:
        s = f.summary()
        if f.quantity in spreads:
            s["uniformity"] = spreads[f.quantity].summary()
        out.append(s)
    path.write_text(json.dumps(out, indent=2))
    return path


# -- two dimensions ------------------------------------------------------------------------


@dataclass
class LogBound:
    C_max: float  # smallest C with |G| <= C log(2 + r) at the sampled points
    C_ls: float  # least-squares C
    r: np.ndarray
    magnitudes: np.ndarray


def log_bound_check_2d(table: GreenTable, r_min: float = 1 / 32, r_max: float = 0.25,
                       count: int = 10) -> LogBound:
    """Constant in |G| <= C log(2 + r) on a fixed physical window of radii."""
    if table.dim != 2 or table.kind != "periodic":
        raise FitError("log_bound_check_2d expects a two-dimensional periodic table")
    if r_min < 4 * table.grid.h - 1e-12:
        raise FitError(f"r_min={r_min} is below 4h={4 * table.grid.h}")
    radii = np.geomspace(r_min, r_max, count)
    M = raw_value_magnitude({"value": table.values}, table.grid, table.y, radii)
    ell = np.log(2 + radii)
    return LogBound(float(np.max(M / ell)), float(M @ ell / (ell @ ell)), radii, M)


def sup_relative_gap(a: GreenTable, b: GreenTable, r_min: float | None = None) -> float:
    """max |a - b| / max |b| over nodes at periodic distance >= r_min from the source."""
    if a.grid != b.grid:
        raise FitError("tables live on different grids")
    r_min = 4 * b.grid.h if r_min is None else r_min
    z = b.displacement(b.coords())
    far = np.linalg.norm(z, axis=-1) >= r_min - 1e-12
    return float(np.abs(a.values - b.values)[far].max() / np.abs(b.values)[far].max())
