"""Periodic interpolation of nodal arrays on the unit torus."""

from __future__ import annotations

import numpy as np


def multilinear(values: np.ndarray, x: np.ndarray, period: float = 1.0) -> np.ndarray:
    """Periodic multilinear (trilinear in 3D) interpolation.

    ``values`` has shape (N,)*d with node i at i*period/N; ``x`` has shape (..., d).
    """
    d = values.ndim
    N = values.shape[0]
    x = np.asarray(x, dtype=float)
    u = x * (N / period)
    i0 = np.floor(u).astype(np.int64)
    w = u - i0
    i0 %= N
    out = np.zeros(x.shape[:-1])
    for corner in np.ndindex(*(2,) * d):
        idx = tuple((i0[..., a] + corner[a]) % N for a in range(d))
        wt = np.ones(x.shape[:-1])
        for a in range(d):
            wt = wt * (w[..., a] if corner[a] else 1.0 - w[..., a])
        out += wt * values[idx]
    return out


def centered_gradient(values: np.ndarray, h: float) -> np.ndarray:
    """Second-order periodic centered differences; returns shape (d,) + values.shape."""
    return np.stack([(np.roll(values, -1, a) - np.roll(values, 1, a)) / (2 * h)
                     for a in range(values.ndim)])


class TrigInterpolant:
    """Trigonometric interpolant of periodic nodal data, kept to its significant modes.

    Smooth everywhere, so its gradient is exact and line integrals of the
    gradient reproduce differences of values.
    """

    def __init__(self, values: np.ndarray, rel_threshold: float = 1e-12, max_modes: int = 20000):
        N = values.shape[0]
        d = values.ndim
        c = np.fft.fftn(values) / values.size
        mag = np.abs(c)
        keep = mag > rel_threshold * max(mag.max(), 1e-300)
        if keep.sum() > max_modes:
            cut = np.sort(mag.ravel())[-max_modes]
            keep = mag >= cut
        idx = np.nonzero(keep)
        freqs = np.fft.fftfreq(N, 1.0 / N)
        k = np.stack([freqs[i] for i in idx], axis=-1)
        # the interpolant is Re(sum c e^{2 pi i k.x}); gradients below are of that same
        # real function, so Nyquist modes need no special treatment
        self.k = k
        self.c = c[idx]
        self.dim = d

    def _phase(self, x):
        return np.exp(2j * np.pi * (x @ self.k.T))

    def __call__(self, x: np.ndarray, chunk: int = 8192) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        flat = x.reshape(-1, self.dim)
        out = np.empty(flat.shape[0])
        for s in range(0, flat.shape[0], chunk):
            e = self._phase(flat[s:s + chunk])
            out[s:s + chunk] = (e @ self.c).real
        return out.reshape(x.shape[:-1])

    def directional(self, x: np.ndarray, v: np.ndarray, chunk: int = 8192) -> np.ndarray:
        """v . grad w at points x (v broadcast against x)."""
        x = np.asarray(x, dtype=float)
        v = np.broadcast_to(np.asarray(v, dtype=float), x.shape)
        flat = x.reshape(-1, self.dim)
        vf = v.reshape(-1, self.dim)
        out = np.empty(flat.shape[0])
        ce = self.c
        for s in range(0, flat.shape[0], chunk):
            e = self._phase(flat[s:s + chunk])
            kv = vf[s:s + chunk] @ self.k.T
            out[s:s + chunk] = ((e * kv) @ (2j * np.pi * ce)).real
        return out.reshape(x.shape[:-1])
