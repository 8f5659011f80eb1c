"""Cell problems: correctors w_i, adjoint correctors, the homogenized tensor A*.

The corrector w_i is the zero-mean periodic solution of
-div(A (grad w_i + e_i)) = 0; the adjoint corrector solves the same problem
with A^T.  Fluxes and averages reuse the face/edge differences of the torus
operator so that A* is consistent with the discrete cell problem.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .coeff_fields import CoefficientField
from .interp import TrigInterpolant, centered_gradient, multilinear
from .torus import DEFAULT_TOL, DiscreteOperator, GridFunction, TorusGrid, assemble, solve


class HomogenizationError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class CorrectorSet:
    field: CoefficientField
    grid: TorusGrid
    w: tuple[np.ndarray, ...] = field(repr=False)
    w_dagger: tuple[np.ndarray, ...] = field(repr=False)
    residuals: dict = field(default_factory=dict)
    op: DiscreteOperator | None = field(default=None, repr=False)

    @property
    def dim(self) -> int:
        return self.grid.dim

    def value(self, i: int, x, adjoint: bool = False) -> np.ndarray:
        """w_i (or w_i^dagger) at arbitrary points by periodic multilinear interpolation."""
        arr = (self.w_dagger if adjoint else self.w)[i]
        return multilinear(arr, x)

    def gradient(self, i: int, x, adjoint: bool = False) -> np.ndarray:
        """grad w_i at points x (..., d), from interpolated centered differences."""
        arr = (self.w_dagger if adjoint else self.w)[i]
        if not np.any(arr):
            return np.zeros(np.shape(x))
        g = centered_gradient(arr, self.grid.h)
        return np.stack([multilinear(g[a], x) for a in range(self.dim)], axis=-1)


def _flux_divergence_of_unit_gradient(op: DiscreteOperator, i: int) -> np.ndarray:
    """L applied to the (non-periodic) linear function x_i, which is periodic."""
    h = op.grid.h
    f = op.diag[i]
    out = (np.roll(f, 1, i) - f) / h
    for (a, b), coef in op.offdiag.items():
        if b != i:
            continue
        w = 0.5 * (coef + np.roll(coef, 1, b))
        out += (np.roll(w, 1, a) - w) / h
    return out


def correctors(field_: CoefficientField, grid: TorusGrid, tol: float = DEFAULT_TOL) -> CorrectorSet:
    """Solve the d cell problems for A and, unless A is symmetric, for A^T."""
    op = assemble(field_, 1, grid)
    residuals = {}

    def cell_solves(o: DiscreteOperator, tag: str):
        ws = []
        for i in range(grid.dim):
            rhs = -_flux_divergence_of_unit_gradient(o, i)
            if np.abs(rhs).max() <= 1e-13 * max(1.0, np.abs(o.diag[i]).max()) / grid.h:
                ws.append(np.zeros(grid.shape))
                residuals[f"{tag}{i}"] = 0.0
                continue
            u = solve(o, GridFunction(grid, rhs), tol)
            residuals[f"{tag}{i}"] = u.info["residual"]
            ws.append(u.values)
        return tuple(ws)

    w = cell_solves(op, "w")
    w_dag = w if op.symmetric else cell_solves(op.transpose(), "w_dagger")
    return CorrectorSet(field_, grid, w, w_dag, residuals, op)


# -- homogenized tensor ------------------------------------------------------------


def jacobi_eigh(S: np.ndarray, tol: float = 1e-14, max_sweeps: int = 100):
    """Cyclic Jacobi eigendecomposition of a small symmetric matrix.

    Returns (eigenvalues ascending, V) with S = V diag V^T.
    """
    A = np.array(S, dtype=float)
    n = A.shape[0]
    V = np.eye(n)
    scale = max(np.abs(A).max(), 1e-300)
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(A**2) - np.sum(np.diag(A) ** 2))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                if A[p, q] == 0.0:
                    continue
                theta = (A[q, q] - A[p, p]) / (2 * A[p, q])
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1)) if theta else 1.0
                c = 1 / np.sqrt(t * t + 1)
                s = t * c
                J = np.eye(n)
                J[p, p] = J[q, q] = c
                J[p, q] = s
                J[q, p] = -s
                A = J.T @ A @ J
                V = V @ J
    else:
        raise HomogenizationError("Jacobi iteration did not converge")
    ev = np.diag(A).copy()
    order = np.argsort(ev)
    return ev[order], V[:, order]


@dataclass(frozen=True)
class HomogenizedTensor:
    A_star: np.ndarray
    A_star_sym: np.ndarray
    eigvals: np.ndarray
    eigvecs: np.ndarray  # columns

    @classmethod
    def from_matrix(cls, A_star) -> "HomogenizedTensor":
        A_star = np.asarray(A_star, dtype=float)
        S = 0.5 * (A_star + A_star.T)
        ev, V = jacobi_eigh(S)
        if ev[0] <= 0:
            raise HomogenizationError(f"symmetric part of A* is not SPD (eigenvalues {ev})")
        return cls(A_star, S, ev, V)

    @property
    def dim(self) -> int:
        return self.A_star.shape[0]

    @property
    def O(self) -> np.ndarray:
        """Orthogonal O with A*_s = O^{-1} diag(lam^{-2}) O."""
        return self.eigvecs.T

    @property
    def lam(self) -> np.ndarray:
        return self.eigvals ** -0.5

    @property
    def sym_inverse(self) -> np.ndarray:
        return self.eigvecs @ np.diag(1.0 / self.eigvals) @ self.eigvecs.T

    def reconstruct(self) -> np.ndarray:
        return np.linalg.inv(self.O) @ np.diag(self.lam**-2.0) @ self.O

    def to_json(self) -> dict:
        return {
            "A_star": self.A_star.tolist(),
            "A_star_sym": self.A_star_sym.tolist(),
            "eigvals": self.eigvals.tolist(),
            "eigvecs": self.eigvecs.tolist(),
        }

    @classmethod
    def from_json(cls, data) -> "HomogenizedTensor":
        if isinstance(data, str):
            data = json.loads(data)
        return cls.from_matrix(data["A_star"])


def homogenize(cs: CorrectorSet) -> HomogenizedTensor:
    """A*_{ji} = mean over the cell of e_j . A (e_i + grad w_i), face/edge quadrature."""
    op = cs.op if cs.op is not None else assemble(cs.field, 1, cs.grid)
    d = cs.dim
    h = cs.grid.h
    A = np.zeros((d, d))
    for i in range(d):
        w = cs.w[i]
        dw = [(np.roll(w, -1, a) - w) / h for a in range(d)]
        for j in range(d):
            A[j, i] = np.mean(op.diag[j] * ((i == j) + dw[j]))
            for b in range(d):
                coef = op.offdiag.get((j, b))
                if b == j or coef is None:
                    continue
                cb = 0.5 * (dw[b] + np.roll(dw[b], -1, j))
                A[j, i] += np.mean(coef * ((i == b) + cb))
    return HomogenizedTensor.from_matrix(A)


# -- Q tensor ------------------------------------------------------------------------


def q_tensor(cs: CorrectorSet, x, y) -> np.ndarray:
    """Q_ij(x, y) = w_i(x) w_j^dagger(y)."""
    wx = np.array([cs.value(i, x) for i in range(cs.dim)])
    wy = np.array([cs.value(j, y, adjoint=True) for j in range(cs.dim)])
    return np.outer(wx, wy)


def _gauss(order: int, a: float, b: float):
    t, w = np.polynomial.legendre.leggauss(order)
    return 0.5 * (b - a) * t + 0.5 * (a + b), 0.5 * (b - a) * w


def _averaged_factor(interp: TrigInterpolant | None, x: np.ndarray, i: int, order: int) -> float:
    """int_Q int_0^1 x'.(e_i + grad w(x + t x')) dt dx' by tensor Gauss quadrature."""
    d = x.shape[0]
    s, ws = _gauss(order, -0.5, 0.5)
    t, wt = _gauss(order, 0.0, 1.0)
    mesh = np.stack(np.meshgrid(*([s] * d), indexing="ij"), axis=-1).reshape(-1, d)
    wmesh = np.prod(np.stack(np.meshgrid(*([ws] * d), indexing="ij"), axis=-1).reshape(-1, d), axis=1)
    total = float(np.sum(wmesh * mesh[:, i]))
    if interp is None:
        return total
    for tk, wk in zip(t, wt):
        pts = x[None, :] + tk * mesh
        total += wk * float(np.sum(wmesh * interp.directional(pts, mesh)))
    return total


def q_tensor_oracle(cs: CorrectorSet, x, y, order: int = 16) -> np.ndarray:
    """Q_ij from its defining integral over Q^2 x [0,1]^2.

    The integrand factorizes into an x-part and a y-part, each computed by
    tensor Gauss quadrature of order ``order`` per axis using the trigonometric
    interpolant of the nodal correctors.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    d = cs.dim

    def interps(ws):
        return [TrigInterpolant(w) if np.any(w) else None for w in ws]

    iw = interps(cs.w)
    iwd = iw if cs.w_dagger is cs.w else interps(cs.w_dagger)
    fx = np.array([_averaged_factor(iw[i], x, i, order) for i in range(d)])
    fy = np.array([_averaged_factor(iwd[j], y, j, order) for j in range(d)])
    return np.outer(fx, fy)
