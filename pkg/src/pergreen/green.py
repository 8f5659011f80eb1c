"""Green functions: periodic tables, windowed whole-space tables, the
homogenized closed form and the two-scale Hessian surrogate.

Periodic tables solve  -div_x(A(n x) grad_x G(x, y)) = delta_y - 1  on the unit
torus with zero mean.  Windowed tables solve the same problem on a torus of
period L (coefficient extended periodically) as a stand-in for the
whole-space kernel; the leading truncation error is a constant of order
L^{2-d} plus a quadratic background, both measured against a 2L solve.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from .cells import CorrectorSet, HomogenizedTensor, correctors, homogenize
from .coeff_fields import CoefficientField, extrude
from .interp import multilinear
from .torus import (DEFAULT_TOL, DiscreteOperator, GridFunction, TorusGrid, assemble,
                    discrete_delta, read_gsgf, solve, solve_many, write_gsgf)

DEFAULT_MAX_POINTS = 2**27


class DomainError(ValueError):
    pass


class WindowError(DomainError):
    """A requested evaluation falls outside the window of a windowed table."""

    def __init__(self, msg: str, required_L: int | None = None):
        super().__init__(msg)
        self.required_L = required_L


class MemoryGuardError(ValueError):
    pass


# -- tables ---------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class GreenTable:
    """Nodal values of G(., y) on a torus of period ``period`` (1 or L)."""

    kind: str
    field: CoefficientField | None
    n: int
    grid: TorusGrid
    y: np.ndarray
    values: np.ndarray = field(repr=False)
    residual: float = 0.0
    period: float = 1.0
    L: int | None = None
    bias: float | None = None
    raw: np.ndarray | None = field(default=None, repr=False)
    info: dict = field(default_factory=dict, repr=False)

    @property
    def dim(self) -> int:
        return self.grid.dim

    @property
    def spacing(self) -> float:
        return self.period / self.grid.N

    def coords(self) -> np.ndarray:
        return self.grid.coords() * self.period

    def displacement(self, x) -> np.ndarray:
        """x - y reduced to [-period/2, period/2)^d."""
        z = np.asarray(x, dtype=float) - self.y
        return (z + self.period / 2) % self.period - self.period / 2

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.kind == "windowed_freespace":
            z = np.asarray(x, dtype=float) - self.y
            if np.any(np.abs(z) > self.period / 2 + 1e-12):
                need = 2.0 * np.abs(z).max()
                raise WindowError(
                    f"point at |x - y|_inf = {np.abs(z).max():.3g} lies outside the window "
                    f"[-{self.period / 2:g}, {self.period / 2:g}); need L >= {need:.3g}",
                    required_L=int(2 ** np.ceil(np.log2(need))))
        return multilinear(self.values, x, self.period)

    def node_value(self, x) -> float:
        """Value at a grid node (no interpolation)."""
        u = np.asarray(x, dtype=float) / self.spacing
        r = np.round(u)
        if np.abs(u - r).max() > 1e-9:
            raise ValueError(f"{tuple(np.asarray(x))} is not a node of the table")
        return float(self.values[tuple(int(v) % self.grid.N for v in r)])

    def sidecar(self) -> dict:
        return {"kind": self.kind, "n": self.n, "y": self.y.tolist(), "residual": self.residual,
                "L": self.L, "bias": self.bias, "period": self.period, "dim": self.dim,
                "N": self.grid.N}

    def save(self, path) -> tuple[Path, Path]:
        path = Path(path)
        bin_path = path.with_suffix(".gsgf")
        json_path = path.with_suffix(".json")
        write_gsgf(bin_path, GridFunction(self.grid, self.values))
        json_path.write_text(json.dumps(self.sidecar(), indent=2))
        return bin_path, json_path


def load_table(path, field_: CoefficientField | None = None) -> GreenTable:
    path = Path(path)
    gf = read_gsgf(path.with_suffix(".gsgf"))
    meta = json.loads(path.with_suffix(".json").read_text())
    return GreenTable(meta["kind"], field_, meta["n"], gf.grid, np.asarray(meta["y"], dtype=float),
                      gf.values, meta["residual"], meta.get("period", 1.0), meta.get("L"),
                      meta.get("bias"))


# -- periodic Green functions ---------------------------------------------------------


def periodic_green(field_: CoefficientField, n: int, grid: TorusGrid, y,
                   tol: float = DEFAULT_TOL, op: DiscreteOperator | None = None) -> GreenTable:
    """Zero-mean periodic G_n(., y); y must be a grid node."""
    op = op if op is not None else assemble(field_, n, grid)
    y = np.asarray(y, dtype=float) % 1.0
    u = solve(op, discrete_delta(grid, y), tol)
    return GreenTable("periodic", field_, n, grid, y, u.values, u.info["residual"],
                      info={"iterations": u.info["iterations"]})


def periodic_green_many(field_: CoefficientField, n: int, grid: TorusGrid, ys,
                        tol: float = DEFAULT_TOL, jobs: int = 1,
                        op: DiscreteOperator | None = None) -> list[GreenTable]:
    op = op if op is not None else assemble(field_, n, grid)
    ys = [np.asarray(y, dtype=float) % 1.0 for y in ys]
    sols = solve_many(op, [discrete_delta(grid, y) for y in ys], tol, jobs)
    return [GreenTable("periodic", field_, n, grid, y, u.values, u.info["residual"],
                       info={"iterations": u.info["iterations"]}) for y, u in zip(ys, sols)]


def derivative_tables(field_: CoefficientField, n: int, grid: TorusGrid, y,
                      tol: float = DEFAULT_TOL, jobs: int = 1) -> dict[str, np.ndarray]:
    """G, grad_x G, grad_y G and grad_x grad_y G around a source y.

    x-derivatives are centered differences of the table; y-derivatives come
    from re-solving with the source moved by +-h along each axis.
    Shapes: value (N,)*d, grad_x/grad_y (d,)+(N,)*d, mixed (d, d)+(N,)*d with
    mixed[a, b] = d/dx_a d/dy_b.
    """
    op = assemble(field_, n, grid)
    d, h = grid.dim, grid.h
    y = np.asarray(y, dtype=float)
    ys = [y]
    for b in range(d):
        e = np.zeros(d)
        e[b] = h
        ys += [y + e, y - e]
    tabs = periodic_green_many(field_, n, grid, ys, tol, jobs, op)
    G = tabs[0].values

    def dx(u, a):
        return (np.roll(u, -1, a) - np.roll(u, 1, a)) / (2 * h)

    grad_y = np.stack([(tabs[1 + 2 * b].values - tabs[2 + 2 * b].values) / (2 * h)
                       for b in range(d)])
    return {
        "value": G,
        "grad_x": np.stack([dx(G, a) for a in range(d)]),
        "grad_y": grad_y,
        "mixed": np.stack([np.stack([dx(grad_y[b], a) for b in range(d)]) for a in range(d)]),
        "residual": max(t.residual for t in tabs),
    }


# -- windowed whole-space Green function ----------------------------------------------------


def window_grid(dim: int, L: int, h: float, max_points: int = DEFAULT_MAX_POINTS) -> TorusGrid:
    N = int(round(L / h))
    if abs(N * h - L) > 1e-9 * L:
        raise DomainError(f"h={h} does not divide the window period L={L}")
    if float(N) ** dim > max_points:
        raise MemoryGuardError(f"window grid of {N}^{dim} points exceeds the cap of {max_points}")
    return TorusGrid(dim, N)


def window_operator(field_: CoefficientField, L: int, h: float, n: int = 1,
                    max_points: int = DEFAULT_MAX_POINTS) -> DiscreteOperator:
    """Operator of the period-L problem written on the unit torus (coefficient A(n L xi))."""
    return assemble(field_, n * L, window_grid(field_.dim, L, h, max_points))


def window_solve(op: DiscreteOperator, L: int, rhs: np.ndarray, tol: float = DEFAULT_TOL):
    """Zero-mean u on the period-L torus with  -div(A grad u) = rhs - mean(rhs)."""
    return solve(op, GridFunction(op.grid, float(L) ** 2 * rhs), tol)


def window_delta(grid: TorusGrid, L: int, y) -> np.ndarray:
    """h^{-d} e_y in physical units on the period-L grid."""
    h = L / grid.N
    idx = grid.index_of(np.asarray(y, dtype=float) / L)
    out = np.zeros(grid.shape)
    out[idx] = h ** -grid.dim
    return out


def _background(grid: TorusGrid, L: int, y, P: np.ndarray) -> np.ndarray:
    """z.P z / (2 d L^d) at the window displacement z = x - y in [-L/2, L/2)^d."""
    d = grid.dim
    h = L / grid.N
    zs = [((np.arange(grid.N) * h - y[a] + L / 2) % L) - L / 2 for a in range(d)]
    Z = np.meshgrid(*zs, indexing="ij")
    q = sum(P[a, b] * Z[a] * Z[b] for a in range(d) for b in range(d))
    return q / (2 * d * float(L) ** d)


def freespace_green(field_: CoefficientField, L: int, h: float, y=None, tol: float = DEFAULT_TOL,
                    n: int = 1, extrapolate: bool = True, tensor: HomogenizedTensor | None = None,
                    max_points: int = DEFAULT_MAX_POINTS) -> GreenTable:
    """Windowed approximation of the whole-space Green function around y.

    ``L`` is the full period of the computational torus, so the usable window
    is y + [-L/2, L/2)^d.  Two solves (periods L and 2L) are made.  The
    quadratic background coming from the -L^{-d} right-hand side is removed
    analytically using A*_s; the remaining constant offset ~ L^{2-d} is
    removed by Richardson extrapolation when ``extrapolate`` is set.  ``bias``
    estimates the error left in the returned values.
    """
    d = field_.dim
    if d < 3:
        raise DomainError("the whole-space Green function is only approximated for d >= 3")
    if L < 4 or int(L) & (int(L) - 1):
        raise DomainError(f"L must be a power of two >= 4, got {L}")
    L = int(L)
    y = np.zeros(d) if y is None else np.asarray(y, dtype=float)
    grid = window_grid(d, L, h, max_points)
    window_grid(d, 2 * L, h, max_points)
    if tensor is None:
        if field_.is_constant:
            tensor = HomogenizedTensor.from_matrix(field_(np.zeros(d)))
        else:
            tensor = homogenize(correctors(field_, TorusGrid(d, max(32, 8 * n))))
    P = tensor.sym_inverse

    op = window_operator(field_, L, h, n, max_points)
    uL = window_solve(op, L, window_delta(grid, L, y), tol)
    op2 = window_operator(field_, 2 * L, h, n, max_points)
    grid2 = op2.grid
    u2 = window_solve(op2, 2 * L, window_delta(grid2, 2 * L, y), tol)
    del op2

    # sample the 2L table at the displacements of the L window
    N = grid.N
    idx = []
    for a in range(d):
        z = ((np.arange(N) * h - y[a] + L / 2) % L) - L / 2
        idx.append(np.round((y[a] + z) / h).astype(int) % (2 * N))
    g2 = u2.values[np.ix_(*idx)] - _background(grid2, 2 * L, y, P)[np.ix_(*idx)]
    gL = uL.values - _background(grid, L, y, P)

    diff = gL - g2
    core = [np.abs(((np.arange(N) * h - y[a] + L / 2) % L) - L / 2) <= L / 4 for a in range(d)]
    inner = diff[np.ix_(*core)]
    w = 2.0 ** (d - 2)
    if extrapolate:
        values = (w * g2 - gL) / (w - 1)
        bias = float(w / (w - 1) * (inner.max() - inner.min()))
    else:
        values = gL
        bias = float(w / (w - 1) * np.abs(inner).max())
    residual = max(uL.info["residual"], u2.info["residual"])
    info = {"offset_L": float(np.median(inner) * w / (w - 1)), "extrapolated": extrapolate,
            "A_star_sym": tensor.A_star_sym.tolist()}
    return GreenTable("windowed_freespace", field_, n, grid, y, values, residual,
                      period=float(L), L=L, bias=bias, raw=uL.values, info=info)


# -- homogenized closed forms -------------------------------------------------------------


def _gauss(order, a, b):
    t, w = np.polynomial.legendre.leggauss(order)
    return 0.5 * (b - a) * t + 0.5 * (a + b), 0.5 * (b - a) * w


def flux_constant(A_star: np.ndarray, order: int = 64) -> float:
    """C such that C (x.S^{-1}x)^{-(d-2)/2} carries unit flux of -A* grad.

    The flux is integrated over the faces of the cube [-1, 1]^d by tensor
    Gauss quadrature; S is the symmetric part of A*.
    """
    A = np.asarray(A_star, dtype=float)
    d = A.shape[0]
    P = np.linalg.inv(0.5 * (A + A.T))
    t, w = _gauss(order, -1.0, 1.0)
    mesh = np.stack(np.meshgrid(*([t] * (d - 1)), indexing="ij"), -1).reshape(-1, d - 1)
    wts = np.prod(np.stack(np.meshgrid(*([w] * (d - 1)), indexing="ij"), -1).reshape(-1, d - 1), 1)
    flux = 0.0
    for a in range(d):
        for sgn in (-1.0, 1.0):
            x = np.insert(mesh, a, sgn, axis=1)
            Px = x @ P
            s = np.einsum("ni,ni->n", x, Px)
            # -A* grad(s^{-(d-2)/2}) . n  with n = sgn e_a
            fl = (d - 2) * s ** (-d / 2) * (Px @ A.T)[:, a] * sgn
            flux += np.dot(wts, fl)
    return 1.0 / flux


@lru_cache(maxsize=64)
def _cached_constant(key: tuple, d: int) -> float:
    return flux_constant(np.array(key).reshape(d, d))


@dataclass(frozen=True, eq=False)
class StarGreen:
    """G*(x) = C (x.S^{-1}x)^{-(d-2)/2}, the whole-space kernel of -div(A* grad)."""

    tensor: HomogenizedTensor
    C: float

    @classmethod
    def from_tensor(cls, tensor: HomogenizedTensor) -> "StarGreen":
        if tensor.dim < 3:
            raise DomainError("closed-form homogenized kernel requires d >= 3")
        return cls(tensor, _cached_constant(tuple(tensor.A_star.ravel()), tensor.dim))

    @property
    def dim(self) -> int:
        return self.tensor.dim

    def _form(self, x):
        x = np.asarray(x, dtype=float)
        Px = x @ self.tensor.sym_inverse
        s = np.einsum("...i,...i->...", x, Px)
        if np.any(s <= 0):
            raise DomainError("the homogenized kernel is singular at x = 0")
        return x, Px, s

    def value(self, x) -> np.ndarray:
        _, _, s = self._form(x)
        return self.C * s ** (-(self.dim - 2) / 2)

    def grad(self, x) -> np.ndarray:
        _, Px, s = self._form(x)
        d = self.dim
        return -self.C * (d - 2) * (s ** (-d / 2))[..., None] * Px

    def hess(self, x) -> np.ndarray:
        _, Px, s = self._form(x)
        d = self.dim
        P = self.tensor.sym_inverse
        num = d * Px[..., :, None] * Px[..., None, :] - s[..., None, None] * P
        return self.C * (d - 2) * num / (s ** ((d + 2) / 2))[..., None, None]

    def __call__(self, x) -> np.ndarray:
        return self.value(x)


def _star(tensor) -> StarGreen:
    """Accept a StarGreen, a HomogenizedTensor or a plain matrix."""
    if isinstance(tensor, StarGreen):
        return tensor
    if not isinstance(tensor, HomogenizedTensor):
        tensor = HomogenizedTensor.from_matrix(np.asarray(tensor, dtype=float))
    return StarGreen.from_tensor(tensor)


def star_green(tensor, x):
    return _star(tensor).value(x)


def star_green_grad(tensor, x):
    return _star(tensor).grad(x)


def star_green_hess(tensor, x):
    return _star(tensor).hess(x)


def ellipsoid_flux(star: StarGreen, r: float = 1.0, order: int = 48) -> float:
    """Flux of -A* grad G* through the ellipsoid x.S^{-1}x = r^2 (d = 3)."""
    if star.dim != 3:
        raise DomainError("ellipsoid flux quadrature is implemented for d = 3")
    M = r * (star.tensor.eigvecs @ np.diag(np.sqrt(star.tensor.eigvals)) @ star.tensor.eigvecs.T)
    ct, wt = np.polynomial.legendre.leggauss(order)
    nphi = 2 * order
    phi = np.arange(nphi) * 2 * np.pi / nphi
    st = np.sqrt(1 - ct**2)
    u = np.stack([np.outer(st, np.cos(phi)), np.outer(st, np.sin(phi)),
                  np.outer(ct, np.ones(nphi))], -1).reshape(-1, 3)
    w = np.outer(wt, np.full(nphi, 2 * np.pi / nphi)).ravel()
    x = u @ M.T
    # the oriented area element of the image of the unit sphere is det(M) M^{-T} u dsigma
    nA = np.linalg.det(M) * (u @ np.linalg.inv(M))
    F = -(star.grad(x) @ star.tensor.A_star.T)
    return float(np.dot(w, np.einsum("ni,ni->n", F, nA)))


def two_scale_hessian(cs: CorrectorSet | None, tensor, x, y) -> np.ndarray:
    """Surrogate for grad_x grad_y G(x, y):

        sum_ij d_{x_i} d_{y_j} G*(x - y) (e_i + grad w_i(x)) (x) (e_j + grad w_j^dagger(y))

    with d_{x_i} d_{y_j} G*(x - y) = -[hess G*(x - y)]_ij.  ``cs=None`` means
    vanishing correctors (constant coefficients).
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.allclose(x, y):
        raise DomainError("two-scale Hessian is singular at x = y")
    H = star_green_hess(tensor, x - y)
    d = x.shape[0]
    Jx = np.eye(d)
    Jy = np.eye(d)
    if cs is not None:
        Jx = Jx + np.array([cs.gradient(i, x) for i in range(d)])
        Jy = Jy + np.array([cs.gradient(j, y, adjoint=True) for j in range(d)])
    # Jx[i, a] = delta_ia + d_a w_i(x)
    return -Jx.T @ H @ Jy


# -- two dimensions through a third variable --------------------------------------------


def green_2d_from_3d(field2d: CoefficientField, grid: TorusGrid, y, t_quadrature_order=None,
                     tol: float = DEFAULT_TOL, n: int = 1) -> GreenTable:
    """Periodic 2D Green function as the t-average of the 3D one for blockdiag(A, 1).

    The 3D table has source (y, 0); the average over t uses the periodic
    trapezoid rule on ``t_quadrature_order`` equispaced slices (default: all
    grid slices).
    """
    if field2d.dim != 2 or grid.dim != 2:
        raise DomainError("green_2d_from_3d expects a two-dimensional field and grid")
    g3 = TorusGrid(3, grid.N)
    f3 = extrude(field2d)
    y = np.asarray(y, dtype=float) % 1.0
    tab = periodic_green(f3, n, g3, np.append(y, 0.0), tol)
    m = grid.N if t_quadrature_order is None else int(t_quadrature_order)
    if grid.N % m:
        raise DomainError(f"t_quadrature_order={m} must divide N={grid.N}")
    vals = tab.values[:, :, :: grid.N // m].mean(axis=2)
    return GreenTable("periodic", field2d, n, grid, y, vals, tab.residual,
                      info={"via": "3d", "t_slices": m})
