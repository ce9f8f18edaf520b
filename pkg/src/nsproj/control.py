"""Control-to-projection map of the kicked system and its Jacobian.

The control is the kick vector ``(eta_1, .., eta_k)`` restricted to a forced
subspace ``H0``; the output is the projection of ``u(kT)`` onto ``F``.
Jacobian columns are ordered kick-major: column ``l * dim(H0) + i`` is the
derivative with respect to the coefficient of ``H0.ids[i]`` in kick ``l``.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import dataclass, field, replace

import numpy as np

from .dynamics import (DivergenceError, ForcingSignal, KickSequence, SimParams, _coeffs,
                       resolve_coeffs, tangent_resolve)
from .fourier_torus import SubspaceSpec, basis
from .forcing import CoefficientLaw, RngStream, _gen

METHODS = ("fd", "tangent")


def digest(a) -> str:
    """Short content hash of an array (or field)."""
    arr = np.ascontiguousarray(_coeffs(a) if not isinstance(a, np.ndarray) else a,
                               dtype="<f8")
    return hashlib.sha256(arr.tobytes()).hexdigest()[:16]


def _kicks_of(T, kicks, M) -> KickSequence:
    if isinstance(kicks, KickSequence):
        if kicks.M != M:
            raise ValueError("kicks do not match the truncation")
        return kicks
    return KickSequence(T, M, np.asarray(kicks, dtype=np.float64))


def _check_support(ks: KickSequence, H0: SubspaceSpec):
    off = np.ones(basis(ks.M).size, dtype=bool)
    off[H0.indices(ks.M)] = False
    if np.any(ks.kicks[..., off] != 0.0):
        raise ValueError("kicks have components outside H0")


def f_k(T: float, u0, kicks, F: SubspaceSpec, p: SimParams) -> np.ndarray:
    """Projection onto ``F`` of ``u(kT)`` under the piecewise-constant kicks.

    ``kicks`` is a :class:`KickSequence` or an array ``(k, *batch, size)``.
    """
    F.check_within(p.M)
    ks = _kicks_of(T, kicks, p.M)
    c0 = np.asarray(_coeffs(u0, p.M), dtype=np.float64)
    c0 = c0 + np.zeros(ks.kicks.shape[1:])
    c = resolve_coeffs(c0, ks.forcing(), ks.k * ks.T, p)
    return c[..., F.indices(p.M)]


@dataclass
class ControlJacobian:
    matrix: np.ndarray
    F: SubspaceSpec
    H0: SubspaceSpec
    k: int
    meta: dict = field(default_factory=dict)

    @property
    def shape(self):
        return self.matrix.shape

    def column_labels(self) -> list[str]:
        return [f"k{l + 1}:{lab}" for l in range(self.k) for lab in self.H0.labels()]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["row"] + self.column_labels())
        for lab, row in zip(self.F.labels(), self.matrix):
            w.writerow([lab] + [repr(float(x)) for x in row])
        return buf.getvalue()


def _unit_directions(H0: SubspaceSpec, k: int, M: int) -> np.ndarray:
    """Kick perturbations ``(k, k*dim H0, size)``: one unit coordinate per column."""
    idx = H0.indices(M)
    m = H0.dim
    D = np.zeros((k, k * m, basis(M).size))
    for l in range(k):
        D[l, l * m + np.arange(m), idx] = 1.0
    return D


def jacobian(T: float, u0, kicks, H0: SubspaceSpec, F: SubspaceSpec, p: SimParams,
             method: str = "tangent", eps_fd: float = 1e-4) -> ControlJacobian:
    """Derivative of :func:`f_k` with respect to the kick coefficients on ``H0``.

    ``tangent`` integrates the linearized system with the forcing perturbation
    equal to ``e_j`` on segment ``l`` and zero elsewhere (all columns in one
    batch).  ``fd`` uses central differences with step ``eps_fd``.
    """
    if method not in METHODS:
        raise ValueError(f"method must be one of {METHODS}")
    if not eps_fd > 0:
        raise ValueError("eps_fd must be positive")
    F.check_within(p.M)
    H0.check_within(p.M)
    ks = _kicks_of(T, kicks, p.M)
    if ks.kicks.ndim != 2:
        raise ValueError("jacobian takes a single kick sequence")
    _check_support(ks, H0)
    c0 = np.asarray(_coeffs(u0, p.M), dtype=np.float64)
    D = _unit_directions(H0, ks.k, p.M)
    fi = F.indices(p.M)
    if method == "tangent":
        df = ForcingSignal(p.M, "piecewise", ks.T * np.arange(ks.k + 1), D)
        th = tangent_resolve(c0, ks.forcing(), np.zeros(basis(p.M).size), df,
                             ks.k * ks.T, p)
        J = th[:, fi].T
    else:
        base = ks.kicks[:, None, :]
        pert = np.concatenate([base + eps_fd * D, base - eps_fd * D], axis=1)
        out = f_k(ks.T, c0, KickSequence(ks.T, p.M, pert), F, p)
        n = D.shape[1]
        J = ((out[:n] - out[n:]) / (2.0 * eps_fd)).T
    meta = {
        "T": ks.T, "k": ks.k, "nu": p.nu, "M": p.M, "dt": p.dt, "integrator": p.integrator,
        "method": method, "eps_fd": eps_fd if method == "fd" else None,
        "u0_digest": digest(c0), "eta_digest": digest(ks.kicks),
        "F": F.labels(), "H0": H0.labels(),
        "column_order": "kick-major, H0 id minor",
    }
    return ControlJacobian(np.ascontiguousarray(J), F, H0, ks.k, meta)


def relative_discrepancy(A, B) -> float:
    """Largest column error of ``A`` against ``B``, relative to the column norm
    (floored at 1e-12 of the largest column norm)."""
    A = A.matrix if isinstance(A, ControlJacobian) else np.asarray(A)
    B = B.matrix if isinstance(B, ControlJacobian) else np.asarray(B)
    cn = np.linalg.norm(B, axis=0)
    floor = 1e-12 * max(cn.max(initial=0.0), 1e-300)
    return float(np.max(np.linalg.norm(A - B, axis=0) / np.maximum(cn, floor)))


@dataclass
class RankReport:
    rank: int
    singular_values: np.ndarray
    dim_F: int
    tol_rel: float

    @property
    def surjective(self) -> bool:
        return self.rank == self.dim_F

    def to_dict(self) -> dict:
        return {"rank": self.rank, "dim_F": self.dim_F, "surjective": self.surjective,
                "tol_rel": self.tol_rel,
                "singular_values": [float(s) for s in self.singular_values]}

    def to_csv(self) -> str:
        lines = ["index,singular_value"]
        lines += [f"{i},{float(s)!r}" for i, s in enumerate(self.singular_values)]
        return "\n".join(lines) + "\n"


def rank_report(J, tol_rel: float = 1e-6) -> RankReport:
    """Numerical rank: number of singular values above ``tol_rel * sigma_max``."""
    if not 0.0 < tol_rel < 1.0:
        raise ValueError("tol_rel must lie in (0, 1)")
    A = J.matrix if isinstance(J, ControlJacobian) else np.asarray(J, dtype=np.float64)
    if A.size == 0:
        raise ValueError("empty Jacobian")
    if not np.isfinite(A).all():
        raise ValueError("Jacobian has non-finite entries")
    s = np.linalg.svd(A, compute_uv=False)
    rank = int(np.sum(s > tol_rel * s[0])) if s[0] > 0 else 0
    return RankReport(rank, s, A.shape[0], tol_rel)


def _draw_kicks(law: CoefficientLaw, k: int, M: int, rng) -> np.ndarray:
    return law.draw(_gen(rng), M, (k,))


def bad_time_scan(T_grid, u0, law: CoefficientLaw, F: SubspaceSpec, p: SimParams, k: int,
                  n_draws: int, seed: int = 0, tol_rel: float = 1e-6) -> list[dict]:
    """For each T, the largest Jacobian rank over ``n_draws`` random kick draws.

    Draw ``i`` at grid point ``g`` uses stream ``g * n_draws + i``.  A T is
    flagged when every draw is rank deficient.
    """
    if n_draws < 1:
        raise ValueError("need at least one kick draw")
    H0 = law.forced()
    rows = []
    for g, T in enumerate(T_grid):
        ranks = []
        for i in range(n_draws):
            kicks = _draw_kicks(law, k, p.M, RngStream(seed, g * n_draws + i))
            J = jacobian(float(T), u0, kicks, H0, F, p, "tangent")
            ranks.append(rank_report(J, tol_rel).rank)
        best = max(ranks)
        rows.append({"T": float(T), "max_rank": best, "dim_F": F.dim,
                     "ranks": ranks, "surjective": best == F.dim,
                     "flagged": best < F.dim})
    return rows


def smallest_surjective_k(T: float, u0, law: CoefficientLaw, F: SubspaceSpec, p: SimParams,
                          k_max: int, seed: int = 0, tol_rel: float = 1e-6):
    """Sweep k = 1..k_max with one random draw each; return (k or None, table)."""
    H0 = law.forced()
    table = []
    for k in range(1, k_max + 1):
        kicks = _draw_kicks(law, k, p.M, RngStream(seed, k))
        r = rank_report(jacobian(T, u0, kicks, H0, F, p, "tangent"), tol_rel)
        table.append({"k": k, "rank": r.rank, "surjective": r.surjective})
        if r.surjective:
            return k, table
    return None, table


def ball_grid(dim: int, R: float, per_axis: int) -> np.ndarray:
    """Points of a regular grid on ``[-R, R]^dim`` lying in the closed ball of radius R."""
    if R == 0:
        return np.zeros((1, dim))
    ax = np.linspace(-R, R, per_axis)
    pts = np.stack(np.meshgrid(*([ax] * dim), indexing="ij"), axis=-1).reshape(-1, dim)
    return pts[np.sum(pts * pts, axis=1) <= R * R * (1 + 1e-12)]


@dataclass
class CoverReport:
    targets: np.ndarray
    min_dist: np.ndarray
    tol: float

    @property
    def fraction(self) -> float:
        return float(np.mean(self.min_dist <= self.tol))

    def to_dict(self) -> dict:
        return {"n_targets": len(self.targets), "tol": self.tol, "fraction": self.fraction,
                "max_min_dist": float(self.min_dist.max())}


def covering_probe(T: float, u0, controls, F: SubspaceSpec, p: SimParams, R: float,
                   tol: float, per_axis: int = 5, chunk: int = 4096) -> CoverReport:
    """Distance from each grid target in ``B_F(R)`` to the nearest reached point.

    ``controls`` is an array ``(k, n_controls, size)`` of kick sequences; all are
    pushed through :func:`f_k` and the nearest image is recorded per target.
    """
    if F.dim > 3:
        raise ValueError("covering_probe needs dim F <= 3")
    controls = np.asarray(controls, dtype=np.float64)
    if controls.ndim != 3:
        raise ValueError("controls must have shape (k, n_controls, size)")
    Y = ball_grid(F.dim, R, per_axis)
    best = np.full(len(Y), np.inf)
    for s in range(0, controls.shape[1], chunk):
        img = f_k(T, u0, controls[:, s:s + chunk], F, p)
        d = np.sqrt(((Y[:, None, :] - img[None, :, :]) ** 2).sum(-1)).min(axis=1)
        best = np.minimum(best, d)
    return CoverReport(Y, best, tol)


def grid_controls(H0: SubspaceSpec, k: int, M: int, amp: float, per_axis: int) -> np.ndarray:
    """All kick sequences whose coefficients on ``H0`` take values on a regular
    grid of ``[-amp, amp]`` (same grid for every kick), shape ``(k, n, size)``."""
    ax = np.linspace(-amp, amp, per_axis)
    m = H0.dim * k
    pts = np.stack(np.meshgrid(*([ax] * m), indexing="ij"), axis=-1).reshape(-1, m)
    out = np.zeros((k, len(pts), basis(M).size))
    idx = H0.indices(M)
    for l in range(k):
        out[l][:, idx] = pts[:, l * H0.dim:(l + 1) * H0.dim]
    return out


def jacobian_report(J: ControlJacobian, rr: RankReport) -> str:
    return json.dumps({"meta": J.meta, "rank": rr.to_dict()}, indent=2)
