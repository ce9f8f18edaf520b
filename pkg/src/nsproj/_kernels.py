"""Hot loops with a numba path and a pure-numpy path.

Set ``NSPROJ_DISABLE_NUMBA=1`` (before import) to force the numpy path, or
call :func:`use_numba` at runtime.  Both paths compute the same sums; the
numba path is only faster.
"""
from __future__ import annotations

import os

import numpy as np

try:
    import numba
    from numba import njit
except ImportError:  # pragma: no cover
    numba = None
    njit = None

HAVE_NUMBA = numba is not None
_enabled = HAVE_NUMBA and os.environ.get("NSPROJ_DISABLE_NUMBA", "0") not in ("1", "true", "yes")


def numba_enabled() -> bool:
    return _enabled


def use_numba(flag: bool) -> None:
    global _enabled
    if flag and not HAVE_NUMBA:
        raise RuntimeError("numba is not installed")
    _enabled = bool(flag)


# ---------------------------------------------------------------------------
# direct convolution of (u . grad) v over the truncation box
# ---------------------------------------------------------------------------

def _conv_box_numpy(U, V, M):
    nb = U.shape[0]
    B = 2 * M + 1
    W = np.zeros((nb, 2, B, B), dtype=np.complex128)
    ar = np.arange(-M, M + 1, dtype=np.float64)
    for ip1 in range(B):
        lo1, hi1 = max(0, M - ip1), min(B, B + M - ip1)
        q1 = ar[lo1:hi1]
        k1 = slice(lo1 + ip1 - M, hi1 + ip1 - M)
        for ip2 in range(B):
            u1 = U[:, 0, ip1, ip2]
            u2 = U[:, 1, ip1, ip2]
            if not (u1.any() or u2.any()):
                continue
            lo2, hi2 = max(0, M - ip2), min(B, B + M - ip2)
            q2 = ar[lo2:hi2]
            k2 = slice(lo2 + ip2 - M, hi2 + ip2 - M)
            fac = 1j * (u1[:, None, None] * q1[None, :, None] + u2[:, None, None] * q2[None, None, :])
            W[:, :, k1, k2] += fac[:, None] * V[:, :, lo1:hi1, lo2:hi2]
    return W


if HAVE_NUMBA:

    @njit(cache=True)
    def _conv_box_numba(U, V, M):
        nb = U.shape[0]
        B = 2 * M + 1
        W = np.zeros((nb, 2, B, B), dtype=np.complex128)
        for b in range(nb):
            for ip1 in range(B):
                for ip2 in range(B):
                    u1 = U[b, 0, ip1, ip2]
                    u2 = U[b, 1, ip1, ip2]
                    if u1 == 0 and u2 == 0:
                        continue
                    lo1 = max(0, M - ip1)
                    hi1 = min(B, B + M - ip1)
                    lo2 = max(0, M - ip2)
                    hi2 = min(B, B + M - ip2)
                    for iq1 in range(lo1, hi1):
                        q1 = iq1 - M
                        ik1 = ip1 + iq1 - M
                        for iq2 in range(lo2, hi2):
                            q2 = iq2 - M
                            ik2 = ip2 + iq2 - M
                            fac = 1j * (u1 * q1 + u2 * q2)
                            W[b, 0, ik1, ik2] += fac * V[b, 0, iq1, iq2]
                            W[b, 1, ik1, ik2] += fac * V[b, 1, iq1, iq2]
        return W


def conv_box(U: np.ndarray, V: np.ndarray, M: int) -> np.ndarray:
    """Fourier coefficients of ``(u . grad) v`` restricted to ``|k|_inf <= M``.

    ``U`` and ``V`` have shape ``(batch, 2, 2M+1, 2M+1)`` and hold the series
    coefficients of the two velocity fields; every product ``p + q = k`` with
    all three indices inside the box is summed exactly.
    """
    U = np.ascontiguousarray(U, dtype=np.complex128)
    V = np.ascontiguousarray(V, dtype=np.complex128)
    if _enabled:
        return _conv_box_numba(U, V, M)
    return _conv_box_numpy(U, V, M)


# ---------------------------------------------------------------------------
# one step of the saturating-set recursion on a bitmap
# ---------------------------------------------------------------------------

def _grow_bitmap_numpy(mask, R):
    pts = np.argwhere(mask) - R
    if len(pts) == 0:
        return mask.copy()
    m = pts[:, None, :]
    n = pts[None, :, :]
    nm = (pts ** 2).sum(axis=1)
    wedge = m[..., 0] * n[..., 1] - m[..., 1] * n[..., 0]
    ok = (nm[:, None] != nm[None, :]) & (wedge != 0)
    s = (m + n)[ok]
    inside = (np.abs(s) <= R).all(axis=1)
    s = s[inside] + R
    out = mask.copy()
    out[s[:, 0], s[:, 1]] = True
    return out


if HAVE_NUMBA:

    @njit(cache=True)
    def _grow_bitmap_numba(mask, R):
        B = 2 * R + 1
        cnt = 0
        for i in range(B):
            for j in range(B):
                if mask[i, j]:
                    cnt += 1
        pts = np.empty((cnt, 2), dtype=np.int64)
        c = 0
        for i in range(B):
            for j in range(B):
                if mask[i, j]:
                    pts[c, 0] = i - R
                    pts[c, 1] = j - R
                    c += 1
        out = mask.copy()
        for a in range(cnt):
            m1 = pts[a, 0]
            m2 = pts[a, 1]
            nm = m1 * m1 + m2 * m2
            for b in range(cnt):
                n1 = pts[b, 0]
                n2 = pts[b, 1]
                if n1 * n1 + n2 * n2 == nm:
                    continue
                if m1 * n2 - m2 * n1 == 0:
                    continue
                l1 = m1 + n1
                l2 = m2 + n2
                if -R <= l1 <= R and -R <= l2 <= R:
                    out[l1 + R, l2 + R] = True
        return out


def grow_bitmap(mask: np.ndarray, R: int) -> np.ndarray:
    """Apply the pair rule once to the points of ``mask`` (a (2R+1)^2 box).

    New points falling outside the box are dropped.
    """
    mask = np.ascontiguousarray(mask, dtype=np.bool_)
    if _enabled:
        return _grow_bitmap_numba(mask, R)
    return _grow_bitmap_numpy(mask, R)


# ---------------------------------------------------------------------------
# symmetric advection through the triad list (vorticity form)
# ---------------------------------------------------------------------------

def _triad_sym_numpy(au, av, kk, pr, pc, qr, qc, G, starts, nk):
    ap = au[:, pr]
    ap = np.where(pc, -np.conj(ap), ap)
    aq = au[:, qr]
    aq = np.where(qc, -np.conj(aq), aq)
    bp = av[:, pr]
    bp = np.where(pc, -np.conj(bp), bp)
    bq = av[:, qr]
    bq = np.where(qc, -np.conj(bq), bq)
    terms = G * (ap * bq + aq * bp)
    out = np.zeros((au.shape[0], nk), dtype=np.complex128)
    if len(G):
        sums = np.add.reduceat(terms, starts, axis=1)
        out[:, kk[starts]] = sums
    return out


if HAVE_NUMBA:

    @njit(cache=True)
    def _triad_sym_numba(au, av, kk, pr, pc, qr, qc, G, starts, nk):
        nb = au.shape[0]
        nt = G.shape[0]
        out = np.zeros((nb, nk), dtype=np.complex128)
        for b in range(nb):
            for t in range(nt):
                ap = au[b, pr[t]]
                bp = av[b, pr[t]]
                if pc[t]:
                    ap = -np.conj(ap)
                    bp = -np.conj(bp)
                aq = au[b, qr[t]]
                bq = av[b, qr[t]]
                if qc[t]:
                    aq = -np.conj(aq)
                    bq = -np.conj(bq)
                out[b, kk[t]] += G[t] * (ap * bq + aq * bp)
        return out


def triad_sym(au, av, table, nk):
    """Curl of ``B(u, v) + B(v, u)`` on the half-plane representatives.

    ``au``/``av`` are ``(batch, nk)`` complex amplitudes; ``table`` is the
    tuple ``(kk, pr, pc, qr, qc, G, starts)`` built by the engine, sorted by
    ``kk``.
    """
    au = np.ascontiguousarray(au, dtype=np.complex128)
    av = np.ascontiguousarray(av, dtype=np.complex128)
    if _enabled:
        return _triad_sym_numba(au, av, *table, nk)
    return _triad_sym_numpy(au, av, *table, nk)


if HAVE_NUMBA:

    @njit(cache=True)
    def _sym_coeffs_numba(cu, cv, cos_idx, sin_idx, reps, rep_norm, kk, pi, qi, G, bounds,
                          amp_osc, norm_mean, same):
        nb, size = cu.shape
        nk = cos_idx.shape[0]
        ns = bounds.shape[0] - 1
        out = np.zeros((nb, size))
        ure = np.empty(2 * nk)
        uim = np.empty(2 * nk)
        vre = np.empty(2 * nk)
        vim = np.empty(2 * nk)
        cre = np.empty(nk)
        cim = np.empty(nk)
        for b in range(nb):
            for r in range(nk):
                # a(p) = -(c_cos + i c_sin)/amp_osc ; a(-p) = -conj(a(p))
                ure[r] = -cu[b, cos_idx[r]] / amp_osc
                uim[r] = -cu[b, sin_idx[r]] / amp_osc
                vre[r] = -cv[b, cos_idx[r]] / amp_osc
                vim[r] = -cv[b, sin_idx[r]] / amp_osc
                ure[nk + r] = -ure[r]
                uim[nk + r] = uim[r]
                vre[nk + r] = -vre[r]
                vim[nk + r] = vim[r]
                cre[r] = 0.0
                cim[r] = 0.0
            # triads are sorted by output mode; accumulate each run in registers
            for s in range(ns):
                sre = 0.0
                sim = 0.0
                if same:
                    for t in range(bounds[s], bounds[s + 1]):
                        p = pi[t]
                        q = qi[t]
                        sre += G[t] * (ure[p] * ure[q] - uim[p] * uim[q])
                        sim += G[t] * (ure[p] * uim[q] + uim[p] * ure[q])
                    sre *= 2.0
                    sim *= 2.0
                else:
                    for t in range(bounds[s], bounds[s + 1]):
                        p = pi[t]
                        q = qi[t]
                        # ap*bq + aq*bp
                        sre += G[t] * ((ure[p] * vre[q] - uim[p] * vim[q])
                                       + (ure[q] * vre[p] - uim[q] * vim[p]))
                        sim += G[t] * ((ure[p] * vim[q] + uim[p] * vre[q])
                                       + (ure[q] * vim[p] + uim[q] * vre[p]))
                k = kk[bounds[s]]
                cre[k] = sre
                cim[k] = sim
            mu1 = cu[b, 0] / norm_mean
            mu2 = cu[b, 1] / norm_mean
            mv1 = cv[b, 0] / norm_mean
            mv2 = cv[b, 1] / norm_mean
            for r in range(nk):
                k1 = reps[r, 0]
                k2 = reps[r, 1]
                # A = -i curl/|k| + i (U_u.k) a_v + i (U_v.k) a_u
                are = cim[r] / rep_norm[r]
                aim = -cre[r] / rep_norm[r]
                su = mu1 * k1 + mu2 * k2
                sv = mv1 * k1 + mv2 * k2
                are += -su * vim[r] - sv * uim[r]
                aim += su * vre[r] + sv * ure[r]
                out[b, cos_idx[r]] = -amp_osc * are
                out[b, sin_idx[r]] = -amp_osc * aim
        return out


def sym_coeffs(cu, cv, tables, same=False):
    """``B(u, v) + B(v, u)`` from coefficient rows to coefficient rows (numba only).

    ``same=True`` asserts ``cu is cv`` and halves the triad arithmetic.
    """
    cu = np.ascontiguousarray(cu, dtype=np.float64)
    cv = np.ascontiguousarray(cv, dtype=np.float64)
    return _sym_coeffs_numba(cu, cv, *tables, bool(same))
