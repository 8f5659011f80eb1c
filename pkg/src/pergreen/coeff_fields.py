"""Periodic matrix-valued coefficient fields A(x) and their rescalings A(n x).

Four kinds are supported:

* ``constant``      A(x) = M
* ``layered``       A(x) = a(x_axis) M, with a given by a sine series or by samples
* ``trigonometric`` A(x) = B + sum_modes amp * prod_i cos(2 pi q_i x_i + phi_i)
* ``tabulated``     multilinear periodic interpolation of a grid of d x d matrices

Every kind reduces its argument modulo 1 before evaluation, which makes the
fields exactly Z^d-periodic.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np
from scipy.stats import qmc

KINDS = ("constant", "layered", "trigonometric", "tabulated")
_INTERNAL_KINDS = ("extruded",)


class FieldError(ValueError):
    """Invalid coefficient description or a non-elliptic sample."""

    def __init__(self, msg: str, point: np.ndarray | None = None):
        super().__init__(msg)
        self.point = point


@dataclass(frozen=True)
class CoefficientField:
    dim: int
    kind: str
    params: dict[str, Any] = field(repr=False)
    mu: float = 1.0

    def __post_init__(self):
        if self.dim < 2:
            raise FieldError(f"dimension must be >= 2, got {self.dim}")
        if self.kind not in KINDS + _INTERNAL_KINDS:
            raise FieldError(f"unknown field kind {self.kind!r}")

    # evaluation ---------------------------------------------------------

    def __call__(self, x: np.ndarray) -> np.ndarray:
        """Evaluate A at points ``x`` of shape (..., d); returns (..., d, d)."""
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dim:
            raise FieldError(f"points must have last axis {self.dim}, got {x.shape}")
        x = x - np.floor(x)
        return _EVALUATORS[self.kind](self, x)

    def sample(self, x, n: int = 1) -> np.ndarray:
        """A(n x) for points ``x`` of shape (..., d)."""
        if n < 1:
            raise FieldError(f"n must be a positive integer, got {n}")
        return self(n * np.asarray(x, dtype=float))

    def component(self, i: int, j: int, x: np.ndarray, n: int = 1) -> np.ndarray:
        return self.sample(x, n)[..., i, j]

    @property
    def is_symmetric(self) -> bool:
        return bool(self.params.get("_symmetric", True))

    @property
    def is_constant(self) -> bool:
        return self.kind == "constant"

    def transpose(self) -> "CoefficientField":
        params = dict(self.params)
        params["_transposed"] = not params.get("_transposed", False)
        return replace(self, params=params)

    def scaled(self, c: float) -> "CoefficientField":
        """The field c * A (ellipticity constant is recomputed by ``make_field``)."""
        params = dict(self.params)
        params["_scale"] = params.get("_scale", 1.0) * c
        return replace(self, params=params)

    def mean_matrix(self, samples: int = 4096) -> np.ndarray:
        pts = _halton(self.dim, samples)
        return self(pts).mean(axis=0)


def _finish(f: CoefficientField, A: np.ndarray) -> np.ndarray:
    A = A * f.params.get("_scale", 1.0)
    if f.params.get("_transposed", False):
        A = np.swapaxes(A, -1, -2)
    return A


def _eval_constant(f, x):
    M = f.params["matrix"]
    return _finish(f, np.broadcast_to(M, x.shape[:-1] + M.shape).copy())


def _profile(f, t):
    p = f.params
    if "samples" in p:
        s = p["samples"]
        m = len(s)
        u = t * m
        i0 = np.floor(u).astype(int) % m
        w = u - np.floor(u)
        return (1 - w) * s[i0] + w * s[(i0 + 1) % m]
    val = np.full_like(t, p["mean"])
    for amp, freq, phase in p["modes"]:
        val = val + amp * np.sin(2 * np.pi * freq * t + phase)
    return val


def _eval_layered(f, x):
    a = _profile(f, x[..., f.params["axis"]])
    M = f.params["matrix"]
    return _finish(f, a[..., None, None] * M)


def _eval_trig(f, x):
    A = np.broadcast_to(f.params["base"], x.shape[:-1] + (f.dim, f.dim)).copy()
    for amp, freq, phase in f.params["modes"]:
        prod = np.ones(x.shape[:-1])
        for i in range(f.dim):
            if freq[i] != 0 or phase[i] != 0:
                prod = prod * np.cos(2 * np.pi * freq[i] * x[..., i] + phase[i])
        A = A + prod[..., None, None] * amp
    return _finish(f, A)


def _eval_tabulated(f, x):
    table = f.params["table"]  # (N,)*d + (d, d)
    N = table.shape[0]
    d = f.dim
    u = x * N
    i0 = np.floor(u).astype(int)
    w = u - i0
    out = np.zeros(x.shape[:-1] + (d, d))
    for corner in np.ndindex(*(2,) * d):
        idx = tuple((i0[..., a] + corner[a]) % N for a in range(d))
        wt = np.ones(x.shape[:-1])
        for a in range(d):
            wt = wt * (w[..., a] if corner[a] else 1 - w[..., a])
        out += wt[..., None, None] * table[idx]
    return _finish(f, out)


def _eval_extruded(f, x):
    base = f.params["base"]
    k = base.dim
    out = np.zeros(x.shape[:-1] + (f.dim, f.dim))
    out[..., :k, :k] = base(x[..., :k])
    idx = np.arange(k, f.dim)
    out[..., idx, idx] = 1.0
    return _finish(f, out)


_EVALUATORS = {
    "extruded": _eval_extruded,
    "constant": _eval_constant,
    "layered": _eval_layered,
    "trigonometric": _eval_trig,
    "tabulated": _eval_tabulated,
}


# construction ------------------------------------------------------------


def _as_matrix(value, dim: int) -> np.ndarray:
    M = np.asarray(value, dtype=float)
    if M.ndim == 0:
        return float(M) * np.eye(dim)
    if M.ndim == 1:
        if M.shape[0] != dim:
            raise FieldError(f"diagonal must have length {dim}")
        return np.diag(M)
    if M.shape != (dim, dim):
        raise FieldError(f"matrix must be {dim}x{dim}, got {M.shape}")
    return M


def make_field(spec: dict[str, Any]) -> CoefficientField:
    """Build a field from a plain description (as found in run configs).

    Required keys are ``dim`` and ``kind``.  ``mu`` is optional; when absent
    it is measured from the construction scan.  A non-SPD sample raises
    :class:`FieldError` carrying the offending point.
    """
    spec = dict(spec)
    try:
        dim = int(spec["dim"])
        kind = spec["kind"]
    except KeyError as exc:
        raise FieldError(f"field spec is missing {exc.args[0]!r}") from None
    if kind not in KINDS:
        raise FieldError(f"unknown field kind {kind!r}; expected one of {KINDS}")

    params: dict[str, Any] = {}
    if kind == "constant":
        params["matrix"] = _as_matrix(spec.get("matrix", 1.0), dim)
    elif kind == "layered":
        params["axis"] = int(spec.get("axis", 0))
        if not 0 <= params["axis"] < dim:
            raise FieldError(f"layer axis {params['axis']} out of range")
        params["matrix"] = _as_matrix(spec.get("matrix", 1.0), dim)
        if "samples" in spec:
            params["samples"] = np.asarray(spec["samples"], dtype=float)
        else:
            params["mean"] = float(spec.get("mean", 1.0))
            params["modes"] = [
                (float(m[0]), float(m[1]), float(m[2]) if len(m) > 2 else 0.0)
                for m in spec.get("modes", [])
            ]
    elif kind == "trigonometric":
        params["base"] = _as_matrix(spec.get("base", 1.0), dim)
        modes = []
        for m in spec.get("modes", []):
            freq = [float(v) for v in m.get("freq", [0] * dim)]
            phase = [float(v) for v in m.get("phase", [0] * dim)]
            if len(freq) != dim or len(phase) != dim:
                raise FieldError("trigonometric mode freq/phase must have length dim")
            if any(q != int(q) for q in freq):
                raise FieldError("trigonometric frequencies must be integers (periodicity)")
            amp = np.asarray(m.get("amp", 0.0), dtype=float)
            amp = amp * np.eye(dim) if amp.ndim == 0 else _as_matrix(amp, dim)
            modes.append((amp, freq, phase))
        params["modes"] = modes
    elif kind == "tabulated":
        if "path" in spec:
            table = read_table(spec["path"])
        else:
            table = np.asarray(spec["table"], dtype=float)
        if table.shape[-2:] != (dim, dim) or table.ndim != dim + 2:
            raise FieldError(f"table must have shape (N,)*{dim} + ({dim},{dim})")
        params["table"] = table

    params["_symmetric"] = _detect_symmetric(kind, params)
    f = CoefficientField(dim, kind, params, 1.0)
    lo, hi, worst = _scan(f, int(spec.get("scan", 1024)))
    if lo <= 0:
        raise FieldError(f"coefficient is not positive definite at x={worst}", point=worst)
    mu = spec.get("mu")
    mu = min(lo, 1.0 / hi) if mu is None else float(mu)
    f = replace(f, mu=mu)
    if spec.get("mu") is not None:
        rep = validate(f, mu, samples=int(spec.get("validate_samples", 10_000)))
        if not rep.passed:
            raise FieldError(
                f"field fails ellipticity at mu={mu}: eigenvalues in "
                f"[{rep.min_eig:.6g}, {rep.max_eig:.6g}]"
            )
    return f


def _detect_symmetric(kind, params) -> bool:
    mats = []
    if kind in ("constant", "layered"):
        mats = [params["matrix"]]
    elif kind == "trigonometric":
        mats = [params["base"]] + [m[0] for m in params["modes"]]
    elif kind == "tabulated":
        t = params["table"]
        return bool(np.allclose(t, np.swapaxes(t, -1, -2), rtol=0, atol=0))
    return all(np.array_equal(M, M.T) for M in mats)


def _halton(dim: int, n: int) -> np.ndarray:
    return qmc.Halton(d=dim, scramble=False).random(n)


def _corners(dim: int) -> np.ndarray:
    return np.array(list(np.ndindex(*(2,) * dim)), dtype=float) * 0.5


def _sample_points(dim: int, n: int) -> np.ndarray:
    return np.vstack([_halton(dim, n), _corners(dim)])


def _sym_eigs(A: np.ndarray) -> np.ndarray:
    return np.linalg.eigvalsh(0.5 * (A + np.swapaxes(A, -1, -2)))


def _scan(f: CoefficientField, n: int):
    pts = _sample_points(f.dim, n)
    ev = _sym_eigs(f(pts))
    i = int(np.argmin(ev[:, 0]))
    return float(ev[:, 0].min()), float(ev[:, -1].max()), pts[i]


@dataclass(frozen=True)
class ValidationReport:
    mu: float
    min_eig: float
    max_eig: float
    periodicity_defect: float
    samples: int

    @property
    def passed(self) -> bool:
        return (
            self.min_eig >= self.mu
            and self.max_eig <= 1.0 / self.mu
            and self.periodicity_defect <= 1e-12
        )


def validate(f: CoefficientField, mu: float, samples: int = 10_000) -> ValidationReport:
    """Check ellipticity bounds and periodicity on a Halton set plus cell corners."""
    if samples < 1:
        raise FieldError("samples must be >= 1")
    pts = _sample_points(f.dim, samples)
    A = f(pts)
    ev = _sym_eigs(A)
    defect = 0.0
    rng_shifts = np.array(list(np.ndindex(*(3,) * f.dim))) - 1
    for z in rng_shifts[:: max(1, len(rng_shifts) // 8)]:
        if not z.any():
            continue
        defect = max(defect, float(np.abs(f(pts + z) - A).max()))
    return ValidationReport(mu, float(ev[:, 0].min()), float(ev[:, -1].max()), defect, samples)


def extrude(f: CoefficientField, extra: int = 1) -> CoefficientField:
    """blockdiag(A(x), I_extra) as a field on R^{d+extra}, independent of the new axes."""
    params = {"base": f, "_symmetric": f.is_symmetric}
    return CoefficientField(f.dim + extra, "extruded", params, min(f.mu, 1.0))


# binary coefficient tables -------------------------------------------------

_TABLE_MAGIC = b"GSCF"


def write_table(path, table: np.ndarray) -> None:
    """Write a tabulated field: magic, int32 d, int32 N, then row-major float64 (little-endian)."""
    table = np.asarray(table, dtype="<f8")
    d = table.shape[-1]
    N = table.shape[0]
    with open(path, "wb") as fh:
        fh.write(_TABLE_MAGIC + struct.pack("<ii", d, N))
        fh.write(np.ascontiguousarray(table).tobytes())


def read_table(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:4] != _TABLE_MAGIC:
        raise FieldError(f"{path}: not a coefficient table (bad magic)")
    d, N = struct.unpack("<ii", data[4:12])
    arr = np.frombuffer(data[12:], dtype="<f8")
    expected = N**d * d * d
    if arr.size != expected:
        raise FieldError(f"{path}: expected {expected} doubles, found {arr.size}")
    return arr.reshape((N,) * d + (d, d)).astype(float)


# convenience constructors used throughout tests and scripts -----------------


def identity_field(dim: int = 3) -> CoefficientField:
    return make_field({"dim": dim, "kind": "constant", "matrix": 1.0, "mu": 1.0})


def layered_sine_field(dim: int = 3, mean: float = 2.0, amp: float = 1.0, axis: int = 0,
                       mu: float | None = None) -> CoefficientField:
    """a(x_axis) I with a(t) = mean + amp sin(2 pi t)."""
    spec = {"dim": dim, "kind": "layered", "axis": axis, "mean": mean, "modes": [[amp, 1, 0.0]]}
    if mu is not None:
        spec["mu"] = mu
    return make_field(spec)


def skew_test_field(dim: int = 3, strength: float = 0.3) -> CoefficientField:
    """I + strength * K(x), K skew with a smooth x-dependent entry; non-symmetric."""
    K = np.zeros((dim, dim))
    K[0, 1], K[1, 0] = 1.0, -1.0
    modes = [{"amp": strength * K, "freq": [1, 1] + [0] * (dim - 2),
              "phase": [0.0, np.pi / 2] + [0.0] * (dim - 2)}]
    if dim > 2:
        K2 = np.zeros((dim, dim))
        K2[1, 2], K2[2, 1] = 1.0, -1.0
        modes.append({"amp": strength * K2, "freq": [0, 0, 1] + [0] * (dim - 3),
                      "phase": [0.0] * dim})
    base = np.eye(dim) + 0.25 * np.diag(np.arange(dim) / max(dim - 1, 1))
    return make_field({"dim": dim, "kind": "trigonometric", "base": base, "modes": modes})
