"""Dyadic ellipsoidal shells of the integer lattice and Hessian sums over them.

For an SPD form S the shell Gamma_m collects the k in Z^d with
4^m <= k.S^{-1}k < 4^{m+1} (Gamma_0 also holds 0 <= . < 4).  Grouping the
conditionally convergent lattice sum of hess G* by shells turns it into an
absolutely summable series of shell sums.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from math import gamma, pi
from pathlib import Path

import numpy as np

from .cells import jacobi_eigh
from .green import _star

DEFAULT_POINT_CAP = 5 * 10**7


class ShellError(ValueError):
    pass


def _form_inverse(Q_form) -> tuple[np.ndarray, np.ndarray]:
    Q = np.asarray(Q_form, dtype=float)
    if Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
        raise ShellError(f"quadratic form must be square, got shape {Q.shape}")
    if not np.allclose(Q, Q.T, rtol=0, atol=1e-12 * np.abs(Q).max()):
        raise ShellError("quadratic form must be symmetric")
    ev, V = jacobi_eigh(Q)
    if ev[0] <= 0:
        raise ShellError(f"quadratic form is not positive definite (eigenvalues {ev})")
    return V @ np.diag(1.0 / ev) @ V.T, ev


def _levels(v: np.ndarray) -> np.ndarray:
    """m with 4^m <= v < 4^{m+1} (m = 0 for v < 4); values within rounding of a power
    of four are assigned to the shell that starts there."""
    v = np.asarray(v, dtype=float)
    m = np.zeros(v.shape, dtype=np.int64)
    pos = v >= 4.0 * (1 - 1e-13)
    if np.any(pos):
        mm = np.floor(np.log(v[pos]) / np.log(4.0)).astype(np.int64)
        # values within rounding of a power of four belong to the upper shell
        up = np.abs(v[pos] - 4.0 ** (mm + 1)) <= 1e-12 * 4.0 ** (mm + 1)
        mm = np.where(up, mm + 1, mm)
        down = (v[pos] < 4.0**mm) & ~(np.abs(v[pos] - 4.0**mm) <= 1e-12 * 4.0**mm)
        mm = np.where(down, mm - 1, mm)
        m[pos] = np.maximum(mm, 1)
    return m


def shell_index(k, Q_form) -> int:
    """Index m of the shell containing the integer vector k."""
    Qi, _ = _form_inverse(Q_form)
    k = np.asarray(k, dtype=float)
    return int(_levels(k @ Qi @ k))


@dataclass(frozen=True, eq=False)
class ShellSet:
    m: int
    Q_form: np.ndarray
    points: np.ndarray = field(repr=False)  # (count, d) int64

    @property
    def count(self) -> int:
        return self.points.shape[0]

    def __contains__(self, k) -> bool:
        k = np.asarray(k)
        return bool(np.any(np.all(self.points == k, axis=1)))


def _half_widths(m: int, Q: np.ndarray) -> np.ndarray:
    # the ellipsoid k.Q^{-1}k < R^2 has axis-aligned half-widths R sqrt(Q_ii)
    return np.floor(2.0 ** (m + 1) * np.sqrt(np.diag(Q)) + 1e-9).astype(np.int64)


def estimated_count(m: int, Q_form) -> float:
    Q = np.asarray(Q_form, dtype=float)
    d = Q.shape[0]
    ball = pi ** (d / 2) / gamma(d / 2 + 1) * np.sqrt(np.linalg.det(Q))
    inner = 0.0 if m == 0 else 2.0 ** (m * d)
    return ball * (2.0 ** ((m + 1) * d) - inner)


def iter_shell(m: int, Q_form, chunk: int = 1 << 20):
    """Yield the points of Gamma_m in chunks, scanning the bounding box slab by slab."""
    if m < 0:
        raise ShellError(f"shell index must be >= 0, got {m}")
    Q = np.asarray(Q_form, dtype=float)
    Qi, _ = _form_inverse(Q)
    d = Q.shape[0]
    w = _half_widths(m, Q)
    rest = [np.arange(-w[a], w[a] + 1) for a in range(1, d)]
    tail = np.stack(np.meshgrid(*rest, indexing="ij"), -1).reshape(-1, d - 1)
    rows = max(1, chunk // max(1, tail.shape[0]))
    firsts = np.arange(-w[0], w[0] + 1)
    for s in range(0, firsts.size, rows):
        f = firsts[s:s + rows]
        pts = np.concatenate([np.repeat(f, tail.shape[0])[:, None],
                              np.tile(tail, (f.size, 1))], axis=1)
        v = np.einsum("ni,ij,nj->n", pts, Qi, pts)
        sel = _levels(v) == m
        if np.any(sel):
            yield pts[sel]


def enumerate_shell(m: int, Q_form, dim: int | None = None,
                    point_cap: int = DEFAULT_POINT_CAP) -> ShellSet:
    """All integer points of Gamma_m (exact bounding-box scan)."""
    Q = np.asarray(Q_form, dtype=float)
    if dim is not None and Q.shape != (dim, dim):
        raise ShellError(f"form of shape {Q.shape} does not match dimension {dim}")
    if m < 0:
        raise ShellError(f"shell index must be >= 0, got {m}")
    _form_inverse(Q)
    est = estimated_count(m, Q)
    if est > point_cap:
        raise ShellError(f"shell m={m} holds about {est:.3g} points, above the cap {point_cap}")
    chunks = list(iter_shell(m, Q))
    pts = np.concatenate(chunks) if chunks else np.zeros((0, Q.shape[0]), dtype=np.int64)
    return ShellSet(m, Q, pts)


# -- Hessian sums ------------------------------------------------------------------------


@dataclass(frozen=True)
class ShellStats:
    m: int
    count: int
    S: np.ndarray  # sum of hess G*(k) over the shell
    abs_sum: np.ndarray  # entrywise sum of |hess G*(k)|

    @property
    def norm(self) -> float:
        return float(np.abs(self.S).max())

    @property
    def scale(self) -> float:
        return float(self.abs_sum.max())


def _orbit_sum(pts: np.ndarray, H: np.ndarray, Qi: np.ndarray) -> np.ndarray:
    """Sum terms grouped by level sets of the form (which contain the symmetry orbits)."""
    v = np.einsum("ni,ij,nj->n", pts, Qi, pts)
    key = np.round(v * 2**20) / 2**20
    order = np.argsort(key, kind="stable")
    _, starts = np.unique(key[order], return_index=True)
    groups = np.add.reduceat(H[order], starts, axis=0)
    return groups.sum(axis=0)


def shell_stats(m: int, tensor, orbit_grouped: bool = False,
                point_cap: int = 4 * DEFAULT_POINT_CAP) -> ShellStats:
    """Hessian sum and absolute sum of G* over Gamma_m (k = 0 excluded)."""
    star = _star(tensor)
    Q = star.tensor.A_star_sym
    Qi = star.tensor.sym_inverse
    d = Q.shape[0]
    est = estimated_count(m, Q)
    if est > point_cap:
        raise ShellError(f"shell m={m} holds about {est:.3g} points, above the cap {point_cap}")
    S = np.zeros((d, d))
    A = np.zeros((d, d))
    count = 0
    for pts in iter_shell(m, Q):
        if m == 0:
            pts = pts[np.any(pts != 0, axis=1)]
        if pts.shape[0] == 0:
            continue
        H = star.hess(pts.astype(float))
        S += _orbit_sum(pts, H, Qi) if orbit_grouped else H.sum(axis=0)
        A += np.abs(H).sum(axis=0)
        count += pts.shape[0]
    return ShellStats(m, count, S, A)


def shell_hessian_sum(m: int, tensor, orbit_grouped: bool = False) -> np.ndarray:
    """S_m = sum over Gamma_m of hess G*(k); for m = 0 the origin is left out."""
    return shell_stats(m, tensor, orbit_grouped).S


@dataclass(frozen=True)
class CertificateRow:
    m: int
    count: int
    S: np.ndarray
    norm: float
    abs_sum: float
    ratio: float | None


def shell_decay_certificate(tensor, m_max: int, m_min: int = 0) -> list[CertificateRow]:
    """Per-shell Hessian sums, their max-entry norms and successive ratios."""
    if m_max < 2:
        raise ShellError("a decay certificate needs m_max >= 2")
    rows = []
    prev = None
    for m in range(m_min, m_max + 1):
        st = shell_stats(m, tensor)
        ratio = None if prev is None or prev == 0 else st.norm / prev
        rows.append(CertificateRow(m, st.count, st.S, st.norm, st.scale, ratio))
        prev = st.norm
    return rows


def write_certificate(rows: list[CertificateRow], path) -> Path:
    path = Path(path)
    d = rows[0].S.shape[0]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["m", "count"] + [f"S_{i}{j}" for i in range(d) for j in range(d)]
                   + ["norm", "abs_sum", "ratio"])
        for r in rows:
            w.writerow([r.m, r.count] + [f"{v:.17g}" for v in r.S.ravel()]
                       + [f"{r.norm:.17g}", f"{r.abs_sum:.17g}",
                          "" if r.ratio is None else f"{r.ratio:.17g}"])
    return path


# -- continuous analogues on the ellipsoids Omega_r -------------------------------------------


def omega_integral(tensor, r: float, order: int = 64, measure: str = "normalized") -> np.ndarray:
    """int over {x.S^{-1}x = r^2} of f_i (x) f_j : hess G*(x), as a d x d matrix (d = 3).

    f_j are the eigenvectors of S.  ``measure="normalized"`` integrates against
    the uniform surface measure of the sphere |x~| = r in the coordinates
    x = sum_j lambda_j^{-1} x~_j f_j (the measure for which the volume element
    factorizes as const * dS dr); ``"euclidean"`` uses the surface measure
    of the ellipsoid in x.
    """
    star = _star(tensor)
    if star.dim != 3:
        raise ShellError("omega_integral is implemented for d = 3")
    T = star.tensor
    V = T.eigvecs
    M = r * V @ np.diag(np.sqrt(T.eigvals))  # x = M u, u on the unit sphere
    ct, wt = np.polynomial.legendre.leggauss(order)
    nphi = 2 * order
    phi = np.arange(nphi) * 2 * np.pi / nphi
    st = np.sqrt(1 - ct**2)
    u = np.stack([np.outer(st, np.cos(phi)), np.outer(st, np.sin(phi)),
                  np.outer(ct, np.ones(nphi))], -1).reshape(-1, 3)
    w = np.outer(wt, np.full(nphi, 2 * np.pi / nphi)).ravel()
    if measure == "normalized":
        jac = np.full(u.shape[0], r**2)
    elif measure == "euclidean":
        jac = abs(np.linalg.det(M)) * np.linalg.norm(u @ np.linalg.inv(M), axis=1)
    else:
        raise ShellError(f"unknown measure {measure!r}")
    H = star.hess(u @ M.T)
    Hf = np.einsum("ai,nab,bj->nij", V, H, V)
    return np.einsum("n,nij->ij", w * jac, Hf)
