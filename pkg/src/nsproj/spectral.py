"""Evaluation of the Leray-projected advection term on coefficient arrays.

All functions take real coefficient arrays of shape ``(..., basis(M).size)``
and broadcast over the leading axes.  Two routes are provided:

* ``direct``: exact convolution over the truncation box (see
  :func:`nsproj._kernels.conv_box`).
* ``pseudospectral``: products on an FFT grid with ``n >= 3M + 1`` points
  per side, which removes all aliasing from a quadratic term truncated back
  to the box (the 2/3 rule).
"""
from __future__ import annotations

import math
from functools import lru_cache

import numpy as np
import scipy.fft as sfft

from . import _kernels
from .fourier_torus import AMP_OSC, NORM_MEAN, basis

DIRECT = "direct_convolution"
PSEUDO = "pseudospectral_2/3"
_ALIASES = {
    "direct": DIRECT,
    "direct_convolution": DIRECT,
    "convolution": DIRECT,
    "pseudospectral": PSEUDO,
    "pseudospectral_2/3": PSEUDO,
    "pseudo": PSEUDO,
    "fft": PSEUDO,
}


def method_name(method: str) -> str:
    try:
        return _ALIASES[method]
    except KeyError:
        raise ValueError(f"unknown nonlinearity method {method!r}") from None


class Engine:
    """FFT layout and gather tables for truncation ``M``."""

    def __init__(self, M: int, n: int | None = None):
        self.M = M
        self.basis = b = basis(M)
        if n is None:
            n = sfft.next_fast_len(3 * M + 1)
        if n < 3 * M + 1:
            raise ValueError(f"grid n={n} aliases the quadratic term for M={M}")
        self.n = n
        self.nr = n // 2 + 1
        nr = self.nr

        reps = b.reps
        # rfft grid cells with k2 >= 0 holding a nonzero mode: k = p (k2 >= 0) or
        # k = -p (p2 <= 0); the k2 == 0 row needs both
        cells, src, sign = [], [], []
        for r, (p1, p2) in enumerate(reps):
            if p2 >= 0:
                cells.append((p1 % n) * nr + p2)
                src.append(r)
                sign.append(False)
            if p2 <= 0:
                cells.append((-p1 % n) * nr + (-p2))
                src.append(r)
                sign.append(True)
        self.cells = np.array(cells, dtype=np.int64)
        self.src = np.array(src, dtype=np.int64)
        self.conj = np.array(sign)
        k1 = np.where(self.conj, -reps[self.src, 0], reps[self.src, 0]).astype(np.float64)
        k2 = np.where(self.conj, -reps[self.src, 1], reps[self.src, 1]).astype(np.float64)
        kn = np.sqrt(k1 * k1 + k2 * k2)
        self.k1, self.k2, self.kn = k1, k2, kn
        self.perp1 = -k2 / kn
        self.perp2 = k1 / kn

        # analysis: for each rep p, the cell of p (p2 >= 0) or of -p
        acell, aconj = [], []
        for p1, p2 in reps:
            if p2 > 0 or (p2 == 0 and p1 > 0):
                acell.append((p1 % n) * nr + p2)
                aconj.append(False)
            else:
                acell.append((-p1 % n) * nr + (-p2))
                aconj.append(True)
        self.acell = np.array(acell, dtype=np.int64)
        self.aconj = np.array(aconj)
        self.rperp1 = -reps[:, 1] / b.rep_norm
        self.rperp2 = reps[:, 0] / b.rep_norm

        # full-box layout for the direct route
        B = 2 * M + 1
        self.box_p = (reps[:, 0] + M) * B + (reps[:, 1] + M)
        self.box_m = (-reps[:, 0] + M) * B + (-reps[:, 1] + M)
        self.triads = _triad_table(M, reps)
        kk, pr, pc, qr, qc, G, starts = self.triads
        nk = len(reps)
        bounds = np.append(starts, len(kk)).astype(np.int64)
        self._fused = (
            b.cos_idx.astype(np.int64), b.sin_idx.astype(np.int64), reps.astype(np.float64),
            b.rep_norm, kk, pr + nk * pc, qr + nk * qc, G, bounds, AMP_OSC, NORM_MEAN,
        )

    # ------------------------------------------------------------------
    # coefficient <-> Fourier
    # ------------------------------------------------------------------
    def rep_amplitude(self, c):
        """Complex amplitude ``a(p)`` with ``uhat(p) = a(p) p_perp/|p|``."""
        b = self.basis
        return -(c[..., b.cos_idx] + 1j * c[..., b.sin_idx]) / AMP_OSC

    def coeffs_from_rep(self, A, mean=None):
        b = self.basis
        out = np.zeros(A.shape[:-1] + (b.size,))
        out[..., b.cos_idx] = -AMP_OSC * A.real
        out[..., b.sin_idx] = -AMP_OSC * A.imag
        if mean is not None:
            out[..., 0] = mean[..., 0]
            out[..., 1] = mean[..., 1]
        return out

    def _grid_amp(self, c):
        a = self.rep_amplitude(c)[..., self.src]
        # a(-p) = -conj(a(p))
        return np.where(self.conj, -np.conj(a), a)

    def velocity_hat(self, c, with_vorticity=False):
        """rfft-grid velocity (and optionally vorticity), scaled for irfft2."""
        n, nr = self.n, self.nr
        lead = c.shape[:-1]
        scale = float(n * n)
        a = self._grid_amp(c) * scale
        ncomp = 3 if with_vorticity else 2
        g = np.zeros(lead + (ncomp, n * nr), dtype=np.complex128)
        g[..., 0, self.cells] = a * self.perp1
        g[..., 1, self.cells] = a * self.perp2
        g[..., 0, 0] = c[..., 0] / NORM_MEAN * scale
        g[..., 1, 0] = c[..., 1] / NORM_MEAN * scale
        if with_vorticity:
            g[..., 2, self.cells] = 1j * self.kn * a
        return g.reshape(lead + (ncomp, n, nr))

    def to_grid(self, c, with_vorticity=False):
        g = self.velocity_hat(c, with_vorticity)
        return sfft.irfft2(g, s=(self.n, self.n), axes=(-2, -1))

    def project_grid(self, w):
        """Leray projection of a physical 2-vector field onto the basis."""
        n = self.n
        wh = sfft.rfft2(w, axes=(-2, -1)) / float(n * n)
        lead = wh.shape[:-3]
        flat = wh.reshape(lead + (2, n * self.nr))
        w1 = flat[..., 0, self.acell]
        w2 = flat[..., 1, self.acell]
        w1 = np.where(self.aconj, np.conj(w1), w1)
        w2 = np.where(self.aconj, np.conj(w2), w2)
        A = w1 * self.rperp1 + w2 * self.rperp2
        mean = NORM_MEAN * flat[..., :, 0].real
        return self.coeffs_from_rep(A, mean)

    # ------------------------------------------------------------------
    # direct route helpers
    # ------------------------------------------------------------------
    def box_hat(self, c):
        """Velocity series coefficients on the box, shape ``(..., 2, B, B)``."""
        M = self.M
        B = 2 * M + 1
        lead = c.shape[:-1]
        a = self.rep_amplitude(c)
        b = self.basis
        perp1 = -b.reps[:, 1] / b.rep_norm
        perp2 = b.reps[:, 0] / b.rep_norm
        g = np.zeros(lead + (2, B * B), dtype=np.complex128)
        g[..., 0, self.box_p] = a * perp1
        g[..., 1, self.box_p] = a * perp2
        ac = np.conj(a)
        g[..., 0, self.box_m] = ac * perp1
        g[..., 1, self.box_m] = ac * perp2
        g[..., 0, M * B + M] = c[..., 0] / NORM_MEAN
        g[..., 1, M * B + M] = c[..., 1] / NORM_MEAN
        return g.reshape(lead + (2, B, B))

    def project_box(self, W):
        M = self.M
        B = 2 * M + 1
        lead = W.shape[:-3]
        flat = W.reshape(lead + (2, B * B))
        w1 = flat[..., 0, self.box_p]
        w2 = flat[..., 1, self.box_p]
        A = w1 * self.rperp1 + w2 * self.rperp2
        mean = NORM_MEAN * flat[..., :, M * B + M].real
        return self.coeffs_from_rep(A, mean)

    # ------------------------------------------------------------------
    # nonlinear terms
    # ------------------------------------------------------------------
    def bilinear(self, cu, cv, method=PSEUDO):
        """B(u, v) = Leray projection of (u . grad) v, truncated to the box."""
        method = method_name(method)
        cu, cv = np.broadcast_arrays(np.asarray(cu, float), np.asarray(cv, float))
        lead = cu.shape[:-1]
        if method == DIRECT:
            U = self.box_hat(cu).reshape((-1, 2, 2 * self.M + 1, 2 * self.M + 1))
            V = self.box_hat(cv).reshape(U.shape)
            W = _kernels.conv_box(U, V, self.M)
            return self.project_box(W).reshape(lead + (self.basis.size,))
        n = self.n
        u = self.to_grid(cu)
        vh = self.velocity_hat(cv)
        k1 = np.fft.fftfreq(n, 1.0 / n)[:, None]
        k2 = np.arange(self.nr, dtype=float)[None, :]
        dv1 = sfft.irfft2(1j * k1 * vh, s=(n, n), axes=(-2, -1))
        dv2 = sfft.irfft2(1j * k2 * vh, s=(n, n), axes=(-2, -1))
        w = u[..., 0:1, :, :] * dv1 + u[..., 1:2, :, :] * dv2
        return self.project_grid(w)

    def _sym_triads(self, cu, cv, same=False):
        cu, cv = np.broadcast_arrays(np.asarray(cu, float), np.asarray(cv, float))
        lead = cu.shape[:-1]
        if _kernels.numba_enabled():
            size = self.basis.size
            out = _kernels.sym_coeffs(cu.reshape((-1, size)), cv.reshape((-1, size)), self._fused,
                                      same)
            return out.reshape(lead + (size,))
        nk = len(self.basis.reps)
        au = self.rep_amplitude(cu).reshape((-1, nk))
        av = self.rep_amplitude(cv).reshape((-1, nk))
        curl = _kernels.triad_sym(au, av, self.triads, nk)
        reps = self.basis.reps
        A = -1j * curl / self.basis.rep_norm
        # advection by the mean flow
        mu = cu.reshape((-1, cu.shape[-1]))[:, :2] / NORM_MEAN
        mv = cv.reshape((-1, cv.shape[-1]))[:, :2] / NORM_MEAN
        # explicit sums: BLAS results can depend on the batch size
        su = mu[:, :1] * reps[:, 0] + mu[:, 1:] * reps[:, 1]
        sv = mv[:, :1] * reps[:, 0] + mv[:, 1:] * reps[:, 1]
        A += 1j * (su * av + sv * au)
        return self.coeffs_from_rep(A).reshape(lead + (self.basis.size,))

    def quadratic(self, c, method=PSEUDO):
        """B(u, u); the FFT route uses the rotational form ``Pi(omega u_perp)``."""
        method = method_name(method)
        if method == DIRECT:
            return 0.5 * self._sym_triads(c, c, same=True)
        g = self.to_grid(c, with_vorticity=True)
        u1, u2, om = g[..., 0, :, :], g[..., 1, :, :], g[..., 2, :, :]
        w = np.stack([-om * u2, om * u1], axis=-3)
        return self.project_grid(w)

    def symmetric(self, cu, cv, method=PSEUDO):
        """B(u, v) + B(v, u), with ``cu`` broadcast against ``cv``."""
        method = method_name(method)
        if method == DIRECT:
            return self._sym_triads(cu, cv)
        gu = self.to_grid(np.asarray(cu, float), with_vorticity=True)
        gv = self.to_grid(np.asarray(cv, float), with_vorticity=True)
        u1, u2, ou = gu[..., 0, :, :], gu[..., 1, :, :], gu[..., 2, :, :]
        v1, v2, ov = gv[..., 0, :, :], gv[..., 1, :, :], gv[..., 2, :, :]
        w = np.stack([-(ou * v2 + ov * u2), ou * v1 + ov * u1], axis=-3)
        return self.project_grid(w)


def _triad_table(M, reps):
    """Unordered pairs ``p + q = k`` for every representative ``k``.

    Weight ``(p ^ q)(|p|^2 - |q|^2) / (|p||q|)`` is the curl of the symmetric
    advection term per unit amplitudes; pairs with zero weight are dropped.
    """
    rep_of = {}
    for r, (p1, p2) in enumerate(reps):
        rep_of[(int(p1), int(p2))] = (r, False)
        rep_of[(-int(p1), -int(p2))] = (r, True)
    rows = []
    for kr, (k1, k2) in enumerate(reps):
        for p1 in range(-M, M + 1):
            for p2 in range(-M, M + 1):
                q1, q2 = int(k1) - p1, int(k2) - p2
                if (p1, p2) == (0, 0) or (q1, q2) == (0, 0):
                    continue
                if abs(q1) > M or abs(q2) > M or (p1, p2) >= (q1, q2):
                    continue
                wedge = p1 * q2 - p2 * q1
                np2, nq2 = p1 * p1 + p2 * p2, q1 * q1 + q2 * q2
                if wedge == 0 or np2 == nq2:
                    continue
                G = wedge * (np2 - nq2) / math.sqrt(np2 * nq2)
                pr, pc = rep_of[(p1, p2)]
                qr, qc = rep_of[(q1, q2)]
                rows.append((kr, pr, pc, qr, qc, G))
    kk = np.array([r[0] for r in rows], dtype=np.int64)
    pr = np.array([r[1] for r in rows], dtype=np.int64)
    pc = np.array([r[2] for r in rows], dtype=np.bool_)
    qr = np.array([r[3] for r in rows], dtype=np.int64)
    qc = np.array([r[4] for r in rows], dtype=np.bool_)
    G = np.array([r[5] for r in rows], dtype=np.float64)
    starts = np.flatnonzero(np.r_[True, kk[1:] != kk[:-1]]) if len(kk) else np.zeros(0, np.int64)
    return kk, pr, pc, qr, qc, G, starts.astype(np.int64)


@lru_cache(maxsize=None)
def engine(M: int, n: int | None = None) -> Engine:
    return Engine(M, n)
