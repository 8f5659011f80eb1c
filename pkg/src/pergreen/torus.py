"""Finite-volume discretization of -div(A(n x) grad u) on the unit torus.

Grid nodes sit at x_i = i h, h = 1/N.  The operator is written as

    L = sum_a D_a^T A_aa D_a + sum_{a != b} C_a^T A_ab C_b

where D_a is the forward difference living on the a-faces (x_i + h e_a / 2)
and C_a, C_b are face differences averaged onto the {a, b}-edges
(x_i + h (e_a + e_b) / 2).  Coefficients are point-sampled at face and edge
midpoints.  With this arrangement L_{A^T} = (L_A)^T exactly, constants are
annihilated, and L is symmetric whenever A is.

Solves are done on the zero-mean subspace with conjugate gradients (GMRES
for non-symmetric fields) preconditioned by the exact inverse of the same
stencil built on the volume-averaged coefficient, applied through FFTs.
"""

from __future__ import annotations

import struct
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.fft as sfft
from scipy.sparse.linalg import LinearOperator, gmres

from .coeff_fields import CoefficientField

MIN_POINTS_PER_PERIOD = 8
DEFAULT_TOL = 1e-10


class ResolutionError(ValueError):
    pass


class GridMismatchError(ValueError):
    pass


class ConvergenceError(RuntimeError):
    def __init__(self, msg: str, history: list[float]):
        super().__init__(msg)
        self.history = history


@dataclass(frozen=True)
class TorusGrid:
    dim: int
    N: int

    def __post_init__(self):
        if self.N < 4 or self.N & (self.N - 1):
            raise ResolutionError(f"N must be a power of two >= 4, got {self.N}")
        if self.dim < 1:
            raise ResolutionError(f"bad dimension {self.dim}")

    @property
    def h(self) -> float:
        return 1.0 / self.N

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.N,) * self.dim

    @property
    def size(self) -> int:
        return self.N**self.dim

    def axis(self) -> np.ndarray:
        return np.arange(self.N) * self.h

    def coords(self, offset=0.0) -> np.ndarray:
        """Node coordinates (shifted by ``offset`` in units of h), shape (N,)*d + (d,)."""
        off = np.broadcast_to(np.asarray(offset, dtype=float), (self.dim,))
        axes = [(np.arange(self.N) + off[a]) * self.h for a in range(self.dim)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    def index_of(self, y, snap: bool = False) -> tuple[int, ...]:
        """Grid index of point ``y``; off-grid points are snapped or rejected."""
        u = np.asarray(y, dtype=float) * self.N
        r = np.round(u)
        if not snap and np.abs(u - r).max() > 1e-9:
            raise ValueError(f"point {tuple(np.asarray(y))} is not a grid node of N={self.N}")
        return tuple(int(v) % self.N for v in r)

    def point(self, index) -> np.ndarray:
        return np.asarray(index, dtype=float) * self.h


@dataclass
class GridFunction:
    grid: TorusGrid
    values: np.ndarray
    info: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.values.shape != self.grid.shape:
            raise GridMismatchError(
                f"values of shape {self.values.shape} do not match grid {self.grid.shape}"
            )

    def mean(self) -> float:
        return float(self.values.mean())

    def inner(self, other: "GridFunction") -> float:
        """Discrete L2 inner product  h^d sum u v."""
        return float(np.vdot(self.values, other.values)) * self.grid.h**self.grid.dim


# -- operator -----------------------------------------------------------------


def _sample(field_: CoefficientField, n: int, grid: TorusGrid, offset, pairs):
    """Sample entries ``pairs`` of A(n x) at x_i + offset*h, chunked along axis 0."""
    out = {p: np.empty(grid.shape) for p in pairs}
    rows = max(1, (1 << 20) // max(1, grid.N ** (grid.dim - 1)))
    off = np.asarray(offset, dtype=float)
    axes = [(np.arange(grid.N) + off[a]) * grid.h for a in range(grid.dim)]
    for s in range(0, grid.N, rows):
        sl = slice(s, min(grid.N, s + rows))
        pts = np.stack(np.meshgrid(axes[0][sl], *axes[1:], indexing="ij"), axis=-1)
        A = field_.sample(pts, n)
        for p in pairs:
            out[p][sl] = A[..., p[0], p[1]]
    return out


@dataclass(frozen=True, eq=False)
class DiscreteOperator:
    field: CoefficientField
    n: int
    grid: TorusGrid
    diag: tuple[np.ndarray, ...] = field(repr=False)
    offdiag: dict = field(repr=False)
    mean_coef: np.ndarray = field(repr=False)

    @property
    def symmetric(self) -> bool:
        for (a, b), arr in self.offdiag.items():
            other = self.offdiag.get((b, a))
            if other is None or not np.array_equal(arr, other):
                return False
        return True

    def matvec(self, u: np.ndarray) -> np.ndarray:
        h = self.grid.h
        out = np.zeros_like(u)
        for a in range(self.grid.dim):
            flux = self.diag[a] * (np.roll(u, -1, a) - u)
            out += np.roll(flux, 1, a) - flux
        if self.offdiag:
            d_cache = {}
            for (a, b), coef in self.offdiag.items():
                if b not in d_cache:
                    d_cache[b] = np.roll(u, -1, b) - u
                db = d_cache[b]
                flux = coef * 0.5 * (db + np.roll(db, -1, a))
                w = 0.5 * (flux + np.roll(flux, 1, b))
                out += np.roll(w, 1, a) - w
        return out / (h * h)

    def transpose(self) -> "DiscreteOperator":
        off = {(b, a): arr for (a, b), arr in self.offdiag.items()}
        return DiscreteOperator(self.field.transpose(), self.n, self.grid, self.diag, off,
                                self.mean_coef.T.copy())

    def symbol(self) -> np.ndarray:
        """Fourier symbol of the constant-coefficient stencil on rfft frequencies."""
        cached = getattr(self, "_symbol", None)
        if cached is not None:
            return cached
        g = self.grid
        d = g.dim
        thetas = []
        for a in range(d):
            k = np.fft.rfftfreq(g.N, 1.0 / g.N) if a == d - 1 else np.fft.fftfreq(g.N, 1.0 / g.N)
            shape = [1] * d
            shape[a] = -1
            thetas.append((2 * np.pi * k / g.N).reshape(shape))
        Abar = self.mean_coef
        sym = 0.0
        for a in range(d):
            sym = sym + Abar[a, a] * 4 * np.sin(thetas[a] / 2) ** 2
        for a in range(d):
            for b in range(d):
                if a != b and Abar[a, b] != 0:
                    sym = sym + Abar[a, b] * np.sin(thetas[a]) * np.sin(thetas[b])
        sym = np.array(sym / g.h**2)
        sym[(0,) * d] = np.inf
        object.__setattr__(self, "_symbol", sym)
        return sym

    def precondition(self, r: np.ndarray) -> np.ndarray:
        """Exact inverse of the mean-coefficient stencil on zero-mean functions."""
        rh = sfft.rfftn(r)
        rh /= self.symbol()
        return sfft.irfftn(rh, s=r.shape)


def assemble(field_: CoefficientField, n: int, grid: TorusGrid) -> DiscreteOperator:
    """Discretize -div(A(n .) grad) on ``grid``; requires N >= 8 n."""
    if field_.dim != grid.dim:
        raise GridMismatchError(f"field dimension {field_.dim} != grid dimension {grid.dim}")
    if n < 1:
        raise ResolutionError(f"n must be >= 1, got {n}")
    if grid.N < MIN_POINTS_PER_PERIOD * n:
        need = MIN_POINTS_PER_PERIOD * n
        need = 1 << (need - 1).bit_length()
        raise ResolutionError(
            f"grid N={grid.N} does not resolve oscillations at n={n}; need N >= {need}"
        )
    d = grid.dim
    diag = []
    for a in range(d):
        off = np.zeros(d)
        off[a] = 0.5
        diag.append(_sample(field_, n, grid, off, [(a, a)])[(a, a)])
    offdiag = {}
    if not field_.is_constant or np.any(field_.params["matrix"] - np.diag(np.diag(field_.params["matrix"]))):
        for a in range(d):
            for b in range(a + 1, d):
                off = np.zeros(d)
                off[[a, b]] = 0.5
                s = _sample(field_, n, grid, off, [(a, b), (b, a)])
                for p in ((a, b), (b, a)):
                    if np.any(s[p]):
                        offdiag[p] = s[p]
    mean = np.zeros((d, d))
    for a in range(d):
        mean[a, a] = diag[a].mean()
    for (a, b), arr in offdiag.items():
        mean[a, b] = arr.mean()
    return DiscreteOperator(field_, n, grid, tuple(diag), offdiag, mean)


def apply(op: DiscreteOperator, u: GridFunction) -> GridFunction:
    if u.grid != op.grid:
        raise GridMismatchError(f"function grid {u.grid} != operator grid {op.grid}")
    return GridFunction(op.grid, op.matvec(u.values))


def discrete_delta(grid: TorusGrid, y, snap: bool = False) -> GridFunction:
    """h^{-d} at node y minus 1: the discrete form of delta_y - 1 (mean exactly 0)."""
    idx = grid.index_of(y, snap=snap)
    vals = np.full(grid.shape, -1.0)
    vals[idx] += float(grid.N**grid.dim)
    return GridFunction(grid, vals)


# -- solver ---------------------------------------------------------------------


def _pcg(op: DiscreteOperator, b: np.ndarray, tol: float, max_iter: int, x0=None):
    x = np.zeros_like(b) if x0 is None else x0 - x0.mean()
    r = b - op.matvec(x) if x0 is not None else b.copy()
    r -= r.mean()
    bnorm = np.linalg.norm(b)
    history = [np.linalg.norm(r) / bnorm]
    if history[-1] <= tol:
        return x, history
    z = op.precondition(r)
    z -= z.mean()
    p = z.copy()
    rz = np.vdot(r, z)
    for _ in range(max_iter):
        Ap = op.matvec(p)
        Ap -= Ap.mean()
        alpha = rz / np.vdot(p, Ap)
        x += alpha * p
        r -= alpha * Ap
        history.append(np.linalg.norm(r) / bnorm)
        if history[-1] <= tol:
            return x, history
        z = op.precondition(r)
        z -= z.mean()
        rz_new = np.vdot(r, z)
        p *= rz_new / rz
        p += z
        rz = rz_new
    raise ConvergenceError(
        f"PCG did not reach tol={tol:g} in {max_iter} iterations (last {history[-1]:.3e})",
        history,
    )


def _gmres(op: DiscreteOperator, b: np.ndarray, tol: float, max_iter: int, x0=None):
    shape = b.shape
    size = b.size

    def mv(v):
        v = v.reshape(shape)
        out = op.matvec(v - v.mean())
        return (out - out.mean()).ravel()

    def pc(v):
        v = v.reshape(shape)
        out = op.precondition(v - v.mean())
        return (out - out.mean()).ravel()

    A = LinearOperator((size, size), matvec=mv, dtype=float)
    M = LinearOperator((size, size), matvec=pc, dtype=float)
    history: list[float] = []
    bnorm = np.linalg.norm(b)

    def cb(res):
        history.append(float(res))

    # unpreconditioned relative residual is checked after the fact; tighten the
    # internal tolerance so the true residual meets ``tol``
    x, status = gmres(A, b.ravel(), x0=None if x0 is None else x0.ravel(), rtol=tol * 0.1,
                      atol=0.0, restart=60, maxiter=max(1, max_iter // 60 + 1), M=M,
                      callback=cb, callback_type="pr_norm")
    x = x.reshape(shape)
    x -= x.mean()
    res = np.linalg.norm(b - mv(x.ravel()).reshape(shape)) / bnorm
    history.append(res)
    if res > tol:
        raise ConvergenceError(f"GMRES did not reach tol={tol:g} (residual {res:.3e})", history)
    return x, history


_ITER_CAP: list[int | None] = [None]


@contextmanager
def iteration_cap(max_iter: int | None):
    """Default iteration limit for every ``solve`` call made inside the block."""
    prev = _ITER_CAP[0]
    _ITER_CAP[0] = max_iter
    try:
        yield
    finally:
        _ITER_CAP[0] = prev


def solve(op: DiscreteOperator, rhs: GridFunction, tol: float = DEFAULT_TOL,
          max_iter: int | None = None, x0: np.ndarray | None = None) -> GridFunction:
    """Zero-mean solution of L u = rhs - mean(rhs).

    The returned function records ``residual`` (relative, true residual),
    ``iterations`` and ``history`` in its ``info`` dict.
    """
    if rhs.grid != op.grid:
        raise GridMismatchError(f"rhs grid {rhs.grid} != operator grid {op.grid}")
    b = rhs.values - rhs.values.mean()
    if max_iter is None:
        max_iter = _ITER_CAP[0] or 10 * op.grid.N
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return GridFunction(op.grid, np.zeros(op.grid.shape),
                            {"residual": 0.0, "iterations": 0, "history": [0.0]})
    if op.symmetric:
        x, hist = _pcg(op, b, tol, max_iter, x0)
    else:
        x, hist = _gmres(op, b, tol, max_iter, x0)
    x -= x.mean()
    r = b - op.matvec(x)
    res = float(np.linalg.norm(r - r.mean()) / bnorm)
    return GridFunction(op.grid, x, {"residual": res, "iterations": len(hist) - 1,
                                     "history": [float(v) for v in hist]})


def solve_many(op: DiscreteOperator, rhs_list, tol: float = DEFAULT_TOL, jobs: int = 1):
    """Independent solves for a batch of right-hand sides."""
    if jobs <= 1:
        return [solve(op, r, tol) for r in rhs_list]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(lambda r: solve(op, r, tol), rhs_list))


# -- GSGF binary dumps --------------------------------------------------------------

GSGF_MAGIC = b"GSGF"


def write_gsgf(path, u: GridFunction) -> None:
    """Header {magic "GSGF", int32 d, int32 N} then row-major little-endian doubles."""
    with open(path, "wb") as fh:
        fh.write(GSGF_MAGIC + struct.pack("<ii", u.grid.dim, u.grid.N))
        fh.write(np.ascontiguousarray(u.values, dtype="<f8").tobytes())


def read_gsgf(path) -> GridFunction:
    data = Path(path).read_bytes()
    if data[:4] != GSGF_MAGIC:
        raise ValueError(f"{path}: bad magic {data[:4]!r}")
    d, N = struct.unpack("<ii", data[4:12])
    vals = np.frombuffer(data[12:], dtype="<f8")
    if vals.size != N**d:
        raise ValueError(f"{path}: expected {N**d} values, found {vals.size}")
    return GridFunction(TorusGrid(d, N), vals.reshape((N,) * d).astype(float))
