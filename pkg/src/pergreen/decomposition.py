"""Lattice decomposition of the periodic Green function into cell-averaged
second differences H^k of the whole-space kernel, grouped by shells.

    H^k(x, y) = K(x, y-k) - avg_{y'} K(x, y+y'-k) - avg_{x'} K(x+x', y-k)
                + avg_{x', y'} K(x+x', y+y'-k)

with averages over the unit cell Q = [-1/2, 1/2)^d.  Three kernel sources
are supported: a translation-invariant kernel g(x - y) (e.g. the closed-form
homogenized kernel, exact for constant coefficients), an arbitrary callable
K(x, y) (test hooks), and windowed whole-space tables for periodic A.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .cells import HomogenizedTensor
from .coeff_fields import CoefficientField, make_field
from .green import (DomainError, GreenTable, StarGreen, WindowError, window_delta,
                    window_operator, window_solve)
from .interp import multilinear
from .shells import _half_widths, enumerate_shell
from .torus import DEFAULT_TOL, TorusGrid


class ProvenanceError(ValueError):
    pass


# -- separable cell weights --------------------------------------------------------------------


def _b3(t):
    a = np.abs(t)
    return np.where(a <= 0.5, 0.75 - a * a, np.where(a <= 1.5, 0.5 * (1.5 - a) ** 2, 0.0))


# name -> (breakpoints per axis, 1D weight); the weights are chi, chi*chi and chi*chi*chi
# for chi the indicator of [-1/2, 1/2]
WEIGHTS = {
    "cell": (np.array([-0.5, 0.5]), lambda t: np.ones_like(t)),
    "tent": (np.array([-1.0, 0.0, 1.0]), lambda t: np.clip(1 - np.abs(t), 0.0, None)),
    "spline3": (np.array([-1.5, -0.5, 0.5, 1.5]), _b3),
}


def _weight(name, s):
    f = WEIGHTS[name][1]
    return np.prod(f(s), axis=-1)


def _gauss01(q):
    t, w = np.polynomial.legendre.leggauss(q)
    return 0.5 * (t + 1), 0.5 * w


def _tensor_rule(q, d):
    t, w = _gauss01(q)
    nodes = np.stack(np.meshgrid(*([t] * d), indexing="ij"), -1).reshape(-1, d)
    wts = np.prod(np.stack(np.meshgrid(*([w] * d), indexing="ij"), -1).reshape(-1, d), 1)
    return nodes, wts


class ConvolutionQuadrature:
    """int g(z + s) W(s) ds for a translation-invariant kernel g singular at 0.

    W is one of the separable piecewise-polynomial cell weights; the support
    is split at its breakpoints.  Boxes far from the singular point -z
    (distance >= eta * diameter) get a tensor Gauss rule, vectorized over z.
    Nearer boxes are bisected; a box containing -z is split there and each
    piece is integrated as d pyramids with apex -z in Duffy coordinates, which
    absorbs the |.|^{2-d} singularity.  Pyramid bases are bisected while they
    are wide compared with their distance to the apex.
    """

    def __init__(self, g: Callable, dim: int, order: int = 8, depth: int = 12,
                 eta: float = 0.5, kappa: float = 1.0, chunk: int = 1 << 21):
        self.g = g
        self.d = dim
        self.q = order
        self.depth = depth
        self.eta = eta
        self.kappa = kappa
        self.chunk = chunk
        self._box = _tensor_rule(order, dim)
        self._face = _tensor_rule(order, dim - 1)
        self._t = _gauss01(order)

    def _boxes(self, name):
        br = WEIGHTS[name][0]
        segs = list(zip(br[:-1], br[1:]))
        out = []
        for combo in np.ndindex(*(len(segs),) * self.d):
            lo = np.array([segs[c][0] for c in combo])
            hi = np.array([segs[c][1] for c in combo])
            out.append((lo, hi))
        return out

    def _gauss_box(self, z, lo, hi, name):
        nodes, wts = self._box
        s = lo + (hi - lo) * nodes
        return np.prod(hi - lo) * np.dot(wts * _weight(name, s), self.g(z + s))

    def __call__(self, z, name: str) -> np.ndarray:
        z = np.atleast_2d(np.asarray(z, dtype=float))
        out = np.zeros(z.shape[0])
        nodes, wts = self._box
        for lo, hi in self._boxes(name):
            p = -z
            gap = np.maximum(np.maximum(lo - p, p - hi), 0.0)
            dist = np.linalg.norm(gap, axis=1)
            far = dist >= self.eta * np.linalg.norm(hi - lo)
            s = lo + (hi - lo) * nodes
            w = np.prod(hi - lo) * wts * _weight(name, s)
            idx = np.nonzero(far)[0]
            step = max(1, self.chunk // s.shape[0])
            for c in range(0, idx.size, step):
                sel = idx[c:c + step]
                out[sel] += self.g(z[sel, None, :] + s[None]) @ w
            for i in np.nonzero(~far)[0]:
                out[i] += self._adaptive(z[i], lo, hi, name, 0)
        return out

    def _adaptive(self, z, lo, hi, name, level):
        p = -z
        tol = 1e-14 * max(1.0, np.abs(p).max())
        if np.all(p >= lo - tol) and np.all(p <= hi + tol):
            return self._singular(z, np.clip(p, lo, hi), lo, hi, name)
        gap = np.maximum(np.maximum(lo - p, p - hi), 0.0)
        if np.linalg.norm(gap) >= self.eta * np.linalg.norm(hi - lo) or level >= self.depth:
            return self._gauss_box(z, lo, hi, name)
        mid = 0.5 * (lo + hi)
        total = 0.0
        for corner in np.ndindex(*(2,) * self.d):
            c = np.array(corner, dtype=bool)
            total += self._adaptive(z, np.where(c, mid, lo), np.where(c, hi, mid), name, level + 1)
        return total

    def _singular(self, z, p, lo, hi, name):
        total = 0.0
        for corner in np.ndindex(*(2,) * self.d):
            c = np.where(np.array(corner, dtype=bool), hi, lo)
            if np.any(np.abs(c - p) <= 1e-15 * max(1.0, np.abs(p).max())):
                continue
            for a in range(self.d):
                others = [b for b in range(self.d) if b != a]
                flo = np.minimum(p[others], c[others])
                fhi = np.maximum(p[others], c[others])
                total += self._pyramid(z, p, a, c[a], others, flo, fhi, name, 0)
        return total

    def _pyramid(self, z, p, a, ca, others, flo, fhi, name, level):
        H = abs(ca - p[a])
        foot = p[others]
        gap = np.maximum(np.maximum(flo - foot, foot - fhi), 0.0)
        dist = np.sqrt(H * H + gap @ gap)
        if np.linalg.norm(fhi - flo) > self.kappa * dist and level < self.depth:
            mid = 0.5 * (flo + fhi)
            total = 0.0
            for corner in np.ndindex(*(2,) * (self.d - 1)):
                c = np.array(corner, dtype=bool)
                total += self._pyramid(z, p, a, ca, others, np.where(c, mid, flo),
                                       np.where(c, fhi, mid), name, level + 1)
            return total
        fn, fw = self._face
        t, tw = self._t
        f = np.empty((fn.shape[0], self.d))
        f[:, others] = flo + (fhi - flo) * fn
        f[:, a] = ca
        v = f - p  # (F, d)
        s = p + t[:, None, None] * v[None]  # (T, F, d)
        jac = (t ** (self.d - 1))[:, None] * H * np.prod(fhi - flo)
        vals = self.g(t[:, None, None] * v[None] + (z + p)) * _weight(name, s)
        return float(np.sum(tw[:, None] * fw[None, :] * jac * vals))


# -- windowed whole-space tables ------------------------------------------------------------------


def _cell_weights_1d(m: int) -> np.ndarray:
    """Trapezoid weights of [-1/2, 1/2] on m+1 nodes of spacing 1/m."""
    w = np.full(m + 1, 1.0 / m)
    w[0] = w[-1] = 0.5 / m
    return w


def _box_filter(u: np.ndarray, m: int) -> np.ndarray:
    """Periodic cell average: sum_j w_j u(x + j h) over j in [-m/2, m/2]^d."""
    w = _cell_weights_1d(m)
    out = u
    for a in range(u.ndim):
        acc = np.zeros_like(out)
        for j, wj in zip(range(-m // 2, m // 2 + 1), w):
            acc += wj * np.roll(out, -j, a)
        out = acc
    return out


@dataclass(frozen=True, eq=False)
class WindowTables:
    """Windowed whole-space kernel around a source y and its cell-averaged companions.

    G = K(., y); U = avg_{y'} K(., y + y'); BG, BU their cell averages in x.
    V and BV (source spread by the tent weight) feed the mean-zero check.
    """

    field: CoefficientField
    n: int
    L: int
    h: float
    y: np.ndarray
    grid: TorusGrid
    G: np.ndarray = field(repr=False)
    U: np.ndarray = field(repr=False)
    BG: np.ndarray = field(repr=False)
    BU: np.ndarray = field(repr=False)
    V: np.ndarray | None = field(default=None, repr=False)
    BV: np.ndarray | None = field(default=None, repr=False)
    residual: float = 0.0

    @property
    def m(self) -> int:
        return int(round(1 / self.h))

    def lookup(self, arr, pts):
        return multilinear(arr, np.asarray(pts, dtype=float), float(self.L))

    def check(self, pts):
        z = np.abs(np.asarray(pts, dtype=float) - self.y) + 0.5
        reach = z.max()
        if reach > self.L / 2 + 1e-9:
            need = int(2 ** np.ceil(np.log2(2 * reach)))
            raise WindowError(f"cell averages reach {reach:.3g} from the source, beyond the "
                              f"window half-width {self.L / 2:g}; need L >= {need}",
                              required_L=need)


def _spread_source(grid: TorusGrid, L: int, y, m: int, kind: str) -> np.ndarray:
    """Source density for a point source spread by the cell (or tent) weight."""
    w1 = _cell_weights_1d(m)
    if kind == "tent":
        w1 = np.convolve(w1, w1)
    half = (w1.size - 1) // 2
    h = L / grid.N
    d = grid.dim
    base = grid.index_of(np.asarray(y, dtype=float) / L)
    out = np.zeros(grid.shape)
    wd = w1
    for _ in range(d - 1):
        wd = np.multiply.outer(wd, w1)
    idx = [(base[a] + np.arange(-half, half + 1)) % grid.N for a in range(d)]
    out[np.ix_(*idx)] += wd / h**d
    return out


def window_tables(field_: CoefficientField, L: int, h: float, y=None, tol: float = DEFAULT_TOL,
                  n: int = 1, with_mean_tables: bool = False) -> WindowTables:
    d = field_.dim
    if d < 3:
        raise DomainError("windowed whole-space tables require d >= 3")
    y = np.zeros(d) if y is None else np.asarray(y, dtype=float)
    m = int(round(1 / h))
    if abs(m * h - 1) > 1e-12 or m % 2:
        raise DomainError("h must be 1/m with m even so that cell boundaries are grid nodes")
    op = window_operator(field_, L, h, n)
    grid = op.grid
    G = window_solve(op, L, window_delta(grid, L, y), tol)
    U = window_solve(op, L, _spread_source(grid, L, y, m, "cell"), tol)
    res = max(G.info["residual"], U.info["residual"])
    V = BV = None
    if with_mean_tables:
        Vs = window_solve(op, L, _spread_source(grid, L, y, m, "tent"), tol)
        res = max(res, Vs.info["residual"])
        V = Vs.values
        BV = _box_filter(V, m)
    return WindowTables(field_, n, L, h, y, grid, G.values, U.values, _box_filter(G.values, m),
                        _box_filter(U.values, m), V, BV, res)


# -- context -------------------------------------------------------------------------------------


def field_signature(f: CoefficientField | None):
    if f is None:
        return None
    if f.is_constant:
        M = f(np.zeros(f.dim))
        return ("constant", f.dim, tuple(np.round(M.ravel(), 12)))
    items = []
    for k in sorted(f.params):
        v = f.params[k]
        items.append((k, repr(np.asarray(v).tolist()) if isinstance(v, np.ndarray) else repr(v)))
    return (f.kind, f.dim, tuple(items))


@dataclass(frozen=True, eq=False)
class HTermContext:
    source: str  # "translation_invariant", "kernel" or "window"
    dim: int
    kernel: Callable | None = None
    window: WindowTables | None = None
    order: int = 8
    depth: int = 12
    eta: float = 0.5
    field: CoefficientField | None = None
    n: int = 1

    def __post_init__(self):
        if self.order < 2:
            raise ValueError(f"quadrature order must be >= 2, got {self.order}")
        if self.depth < 2:
            raise ValueError(f"refinement depth must be >= 2, got {self.depth}")
        if self.source not in ("translation_invariant", "kernel", "window"):
            raise ValueError(f"unknown kernel source {self.source!r}")

    @classmethod
    def analytic(cls, tensor, order: int = 8, depth: int = 12, eta: float = 0.5,
                 field_: CoefficientField | None = None) -> "HTermContext":
        """Closed-form homogenized kernel G*(x - y); exact whole-space kernel for A = A*."""
        star = tensor if isinstance(tensor, StarGreen) else StarGreen.from_tensor(
            tensor if isinstance(tensor, HomogenizedTensor) else HomogenizedTensor.from_matrix(tensor))
        if field_ is None:
            field_ = make_field({"dim": star.dim, "kind": "constant",
                                 "matrix": star.tensor.A_star.tolist()})
        return cls("translation_invariant", star.dim, star.value, None, order, depth, eta, field_)

    @classmethod
    def from_kernel(cls, K: Callable, dim: int, translation_invariant: bool = False,
                    order: int = 4, depth: int = 12, field_=None) -> "HTermContext":
        """K(x, y) on (..., d) arrays, or g(z) when ``translation_invariant``."""
        src = "translation_invariant" if translation_invariant else "kernel"
        return cls(src, dim, K, None, order, depth, 1.0, field_)

    @classmethod
    def windowed(cls, field_: CoefficientField, L: int, h: float, y=None, tol: float = DEFAULT_TOL,
                 n: int = 1, with_mean_tables: bool = False) -> "HTermContext":
        wt = window_tables(field_, L, h, y, tol, n, with_mean_tables)
        return cls("window", field_.dim, None, wt, 2, 2, 1.0, field_, n)

    def quadrature(self) -> ConvolutionQuadrature:
        cached = getattr(self, "_quad", None)
        if cached is None:
            cached = ConvolutionQuadrature(self.kernel, self.dim, self.order, self.depth, self.eta)
            object.__setattr__(self, "_quad", cached)
        return cached

    def with_order(self, order: int, eta: float | None = None) -> "HTermContext":
        return HTermContext(self.source, self.dim, self.kernel, self.window, order, self.depth,
                            self.eta if eta is None else eta, self.field, self.n)


# -- H^k ------------------------------------------------------------------------------------


def _check_pair(ctx, x, y, ks):
    if ctx.source != "kernel":
        z = x - y + ks
        if np.any(np.all(z == 0, axis=1)):
            raise DomainError("H^k is singular for x = y, k = 0")


def _h_translation_invariant(ctx, x, y, ks):
    q = ctx.quadrature()
    z = x - y + ks
    return ctx.kernel(z) - 2 * q(z, "cell") + q(z, "tent")


def _h_kernel(ctx, x, y, ks):
    d = ctx.dim
    nodes, wts = _tensor_rule(ctx.order, d)
    s = nodes - 0.5
    K = ctx.kernel
    out = np.empty(ks.shape[0])
    for i, k in enumerate(ks):
        yk = y - k
        t1 = K(x, yk)
        t2 = wts @ K(np.broadcast_to(x, s.shape), yk + s)
        t3 = wts @ K(x + s, np.broadcast_to(yk, s.shape))
        X = (x + s)[:, None, :]
        Y = (yk + s)[None, :, :]
        t4 = wts @ K(np.broadcast_to(X, (s.shape[0],) * 2 + (d,)),
                     np.broadcast_to(Y, (s.shape[0],) * 2 + (d,))) @ wts
        out[i] = t1 - t2 - t3 + t4
    return out


def _h_window(ctx, x, y, ks):
    wt = ctx.window
    shift = y - wt.y
    j = np.round(shift)
    if np.abs(shift - j).max() > 1e-9:
        raise ProvenanceError(f"y={tuple(y)} is not an integer translate of the table source "
                              f"{tuple(wt.y)}")
    pts = x + ks - j
    wt.check(pts)
    return (wt.lookup(wt.G, pts) - wt.lookup(wt.U, pts) - wt.lookup(wt.BG, pts)
            + wt.lookup(wt.BU, pts))


def h_terms(ctx: HTermContext, x, y, ks) -> np.ndarray:
    """H^k(x, y) for every row k of ``ks``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    ks = np.atleast_2d(np.asarray(ks, dtype=float))
    _check_pair(ctx, x, y, ks)
    if ctx.source == "translation_invariant":
        return _h_translation_invariant(ctx, x, y, ks)
    if ctx.source == "kernel":
        return _h_kernel(ctx, x, y, ks)
    return _h_window(ctx, x, y, ks)


def h_term(ctx: HTermContext, x, y, k) -> float:
    return float(h_terms(ctx, x, y, k)[0])


# -- shells and reports ----------------------------------------------------------------------------


def _form(tensor) -> np.ndarray:
    if isinstance(tensor, StarGreen):
        return tensor.tensor.A_star_sym
    if isinstance(tensor, HomogenizedTensor):
        return tensor.A_star_sym
    A = np.asarray(tensor, dtype=float)
    return 0.5 * (A + A.T)


def _check_window(ctx, x, y, m, Q):
    if ctx.source != "window":
        return
    w = _half_widths(m, Q)
    reach = float(np.max(w + np.abs(np.asarray(x) - np.asarray(y)))) + 0.5
    if reach > ctx.window.L / 2 + 1e-9:
        need = int(2 ** np.ceil(np.log2(2 * reach)))
        raise WindowError(f"shell m={m} reaches {reach:.3g} cells from the source; the window "
                          f"half-width is {ctx.window.L / 2:g}; need L >= {need}", required_L=need)


def shell_terms(ctx: HTermContext, x, y, m: int, tensor) -> tuple[np.ndarray, np.ndarray]:
    """(points of Gamma_m, H^k(x, y) for those points)."""
    Q = _form(tensor)
    _check_window(ctx, x, y, m, Q)
    ks = enumerate_shell(m, Q).points
    return ks, h_terms(ctx, x, y, ks)


def shell_sum(ctx: HTermContext, x, y, m: int, tensor) -> float:
    """T_m = sum over Gamma_m(A*_s) of H^k(x, y)."""
    return float(shell_terms(ctx, x, y, m, tensor)[1].sum())


@dataclass
class DecompositionReport:
    x: np.ndarray
    y: np.ndarray
    m: list
    T: list
    abs_sums: list
    counts: list
    S: list
    beta_hat: float | None
    field_sig: tuple | None = None
    direct_value: float | None = None
    abs_error: float | None = None
    rel_error: float | None = None

    @property
    def value(self) -> float:
        return self.S[-1]

    def to_json(self) -> dict:
        return {
            "x": self.x.tolist(), "y": self.y.tolist(),
            "shells": [{"m": m, "T_m": t, "abs_sum": a, "count": c}
                       for m, t, a, c in zip(self.m, self.T, self.abs_sums, self.counts)],
            "S": self.S, "beta_hat": self.beta_hat, "direct_value": self.direct_value,
            "abs_error": self.abs_error, "rel_error": self.rel_error,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2)


def fit_beta(ms, T) -> float | None:
    """Least-squares slope of -log2|T_m| against m over m >= 1."""
    ms = np.asarray(ms, dtype=float)
    T = np.abs(np.asarray(T, dtype=float))
    sel = (ms >= 1) & (T > 0)
    if sel.sum() < 2:
        return None
    slope = np.polyfit(ms[sel], np.log2(T[sel]), 1)[0]
    return float(-slope)


def reduce_pair(x, y):
    """Move y by an integer vector so that y - x lies in [-1/2, 1/2)^d."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return x, y - np.floor(y - x + 0.5)


def decompose(ctx: HTermContext, x, y, m_max: int, tensor) -> DecompositionReport:
    x, y = reduce_pair(x, y)
    if np.allclose(x, y):
        raise DomainError("decomposition needs x != y")
    Q = _form(tensor)
    _check_window(ctx, x, y, m_max, Q)
    ms, T, A, C, S = [], [], [], [], []
    acc = 0.0
    for m in range(m_max + 1):
        ks, H = shell_terms(ctx, x, y, m, tensor)
        ms.append(m)
        T.append(float(H.sum()))
        A.append(float(np.abs(H).sum()))
        C.append(int(ks.shape[0]))
        acc += T[-1]
        S.append(acc)
    return DecompositionReport(x, y, ms, T, A, C, S, fit_beta(ms, T), field_signature(ctx.field))


def compare_with_direct(report: DecompositionReport, direct: GreenTable) -> dict:
    """|S_M - G(x, y)| against a periodic table with source y."""
    if direct.kind != "periodic":
        raise ProvenanceError(f"direct comparison needs a periodic table, got {direct.kind}")
    if report.field_sig is not None and direct.field is not None:
        if field_signature(direct.field) != report.field_sig:
            raise ProvenanceError("the table and the decomposition were built from different fields")
    dy = (report.y - direct.y) % 1.0
    if np.minimum(dy, 1 - dy).max() > 1e-9:
        raise ProvenanceError(f"table source {tuple(direct.y)} differs from y={tuple(report.y)}")
    G = float(direct(np.asarray(report.x)[None])[0])
    err = abs(report.value - G)
    report.direct_value = G
    report.abs_error = err
    report.rel_error = err / abs(G) if G != 0 else float("inf")
    return {"abs": err, "rel": report.rel_error, "direct": G, "series": report.value}


# -- mean-zero reconstruction ------------------------------------------------------------------------


def _cell_integrals(ctx: HTermContext, x, ks) -> np.ndarray:
    """int over y in x + Q of H^k(x, y), for each k."""
    if ctx.source == "translation_invariant":
        q = ctx.quadrature()
        return q(ks, "cell") - 2 * q(ks, "tent") + q(ks, "spline3")
    if ctx.source == "window":
        wt = ctx.window
        if wt.V is None:
            raise ValueError("window context was built without the mean-zero tables")
        # the y-cell is centred on the table source
        pts = x + ks
        wt.check(pts)
        return (wt.lookup(wt.U, pts) - wt.lookup(wt.V, pts) - wt.lookup(wt.BU, pts)
                + wt.lookup(wt.BV, pts))
    nodes, wts = _tensor_rule(ctx.order, ctx.dim)
    s = nodes - 0.5
    return np.array([wts @ np.array([h_term(ctx, x, x + si, k) for si in s]) for k in ks])


def partial_sum_values(ctx: HTermContext, x, ys, m_max: int, tensor) -> np.ndarray:
    """S_M(x, y) = sum over Gamma_0..Gamma_M of H^k(x, y) at several y."""
    Q = _form(tensor)
    ks = np.concatenate([enumerate_shell(m, Q).points for m in range(m_max + 1)]).astype(float)
    x = np.asarray(x, dtype=float)
    out = np.empty(len(ys))
    for i, y in enumerate(ys):
        out[i] = h_terms(ctx, x, np.asarray(y, dtype=float), ks).sum()
    return out


@dataclass
class MeanZeroResult:
    residual: float
    per_shell: list
    s_norm: float

    @property
    def relative(self) -> float:
        return abs(self.residual) / self.s_norm


def verify_mean_zero(ctx: HTermContext, x, m_max: int, tensor, grid: TorusGrid,
                     norm_order: int = 4, norm_eta: float = 0.25) -> MeanZeroResult:
    """Cell integral in y of the partial sum S_M(x, .) and the sup of S_M on grid nodes.

    The y-integral is taken term by term: each H^k is integrated exactly over
    the cell with the same singular quadrature used for H^k itself (or, for
    windowed tables, with tables whose sources are spread over the cell).
    The sup norm only sets the scale and is evaluated with a cheaper rule
    (``norm_order``, ``norm_eta``) on the cell-centred nodes of ``grid`` translated to x + Q
    (for the analytic kernel the y-cell is x + Q, for windowed tables y0 + Q).
    """
    x = np.asarray(x, dtype=float)
    Q = _form(tensor)
    if ctx.source == "window":
        _check_window(ctx, x, ctx.window.y, m_max, Q)
    per_shell = []
    for m in range(m_max + 1):
        ks = enumerate_shell(m, Q).points.astype(float)
        per_shell.append(float(_cell_integrals(ctx, x, ks).sum()))
    if ctx.source == "window":
        # windowed tables hold a single source, so the scale is |S_M(x, y0)|
        ys = [ctx.window.y]
        nctx = ctx
    else:
        ys = x + (grid.coords(0.5) - 0.5).reshape(-1, grid.dim)
        nctx = ctx.with_order(norm_order, norm_eta)
    s_norm = float(np.abs(partial_sum_values(nctx, x, ys, m_max, tensor)).max())
    return MeanZeroResult(float(np.sum(per_shell)), per_shell, s_norm)
