"""Galerkin integration of  du/dt + nu L u + B(u, u) = g(t).

The dissipative term is integrated exactly with an integrating factor
(Lawson's scheme); the advection and forcing go through an explicit RK2 or
RK4 tableau.  Every array-level routine accepts a leading batch axis, so an
ensemble of trajectories is advanced in lock step.

Step planning: the interval [0, t] is cut at every forcing breakpoint and
each piece is divided into ``ceil(length / dt)`` equal steps, so no step
straddles a jump of a piecewise-constant force.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .fourier_torus import SpectralField, basis, norm_h
from .spectral import DIRECT, PSEUDO, engine, method_name

__all__ = [
    "DivergenceError",
    "ForcingSignal",
    "KickSequence",
    "SimParams",
    "Trajectory",
    "bilinear",
    "kick_chain",
    "rescaled_kick_chain",
    "resolve",
    "resolve_coeffs",
    "rhs",
    "substituted_resolve",
    "tangent_resolve",
]

INTEGRATORS = ("exp_rk2", "exp_rk4")


class DivergenceError(RuntimeError):
    """Numerical blow-up; ``step`` is the index of the offending step."""

    def __init__(self, step: int, t: float, rows=None):
        self.step = step
        self.t = t
        self.rows = rows
        msg = f"integration diverged at step {step} (t={t:.6g})"
        if rows is not None:
            msg += f", rows {list(rows)[:10]}"
        super().__init__(msg)


@dataclass(frozen=True)
class SimParams:
    """Physical and numerical parameters of a run."""

    nu: float
    M: int
    dt: float = 1e-2
    integrator: str = "exp_rk4"
    nonlinearity: str = DIRECT
    blowup_factor: float = 1e6

    def __post_init__(self):
        if not self.nu > 0:
            raise ValueError("viscosity must be positive")
        if self.M < 1:
            raise ValueError("truncation M must be >= 1")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.integrator not in INTEGRATORS:
            raise ValueError(f"integrator must be one of {INTEGRATORS}")
        object.__setattr__(self, "nonlinearity", method_name(self.nonlinearity))

    def stiffness(self) -> float:
        """``dt * nu * 2 M^2``; the exponential factor keeps any value stable
        for the linear part, the advective limit is the caller's concern."""
        return self.dt * self.nu * 2 * self.M ** 2

    def to_dict(self) -> dict:
        return {
            "nu": self.nu,
            "M": self.M,
            "dt": self.dt,
            "integrator": self.integrator,
            "nonlinearity": self.nonlinearity,
        }


def _coeffs(u, M=None):
    if isinstance(u, SpectralField):
        if M is not None and u.M != M:
            raise ValueError(f"field has truncation {u.M}, expected {M}")
        return u.coeffs
    return np.asarray(u, dtype=np.float64)


@dataclass(frozen=True, eq=False)
class ForcingSignal:
    """Time-dependent force on ``[0, horizon]``.

    ``kind == "piecewise"``: ``times`` are breakpoints ``0 = t_0 < ... < t_m``
    and ``values[i]`` acts on ``[t_i, t_{i+1})``.
    ``kind == "sampled"``: ``values[i]`` is the force at ``times[i]``, linearly
    interpolated in between.

    ``values`` has shape ``(m, *batch, size)``; the batch axes broadcast
    against the state.
    """

    M: int
    kind: str
    times: np.ndarray
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        times = np.asarray(self.times, dtype=np.float64)
        values = np.asarray(self.values, dtype=np.float64)
        if self.kind not in ("piecewise", "sampled"):
            raise ValueError("kind must be 'piecewise' or 'sampled'")
        if values.shape[-1] != basis(self.M).size:
            raise ValueError("forcing values do not match the truncation")
        if np.any(np.diff(times) <= 0) or times[0] != 0.0:
            raise ValueError("forcing times must start at 0 and increase")
        expect = len(times) - 1 if self.kind == "piecewise" else len(times)
        if values.shape[0] != expect:
            raise ValueError(f"{self.kind} forcing needs {expect} value slices")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    @classmethod
    def zero(cls, M: int, horizon: float) -> "ForcingSignal":
        return cls(M, "piecewise", np.array([0.0, horizon]), np.zeros((1, basis(M).size)))

    @classmethod
    def constant(cls, g, horizon: float, M: int | None = None) -> "ForcingSignal":
        M = g.M if isinstance(g, SpectralField) else M
        return cls(M, "piecewise", np.array([0.0, horizon]), _coeffs(g)[None])

    @classmethod
    def piecewise(cls, breaks: Sequence[float], fields, M: int | None = None) -> "ForcingSignal":
        if M is None:
            M = fields[0].M
        vals = np.stack([_coeffs(f, M) for f in fields]) if isinstance(fields, (list, tuple)) else fields
        return cls(M, "piecewise", np.asarray(breaks, float), vals)

    @classmethod
    def sampled(cls, times: Sequence[float], fields, M: int | None = None) -> "ForcingSignal":
        if M is None:
            M = fields[0].M
        vals = np.stack([_coeffs(f, M) for f in fields]) if isinstance(fields, (list, tuple)) else fields
        return cls(M, "sampled", np.asarray(times, float), vals)

    @property
    def batch_shape(self) -> tuple:
        return self.values.shape[1:-1]

    def scaled(self, factor: float) -> "ForcingSignal":
        return replace(self, values=self.values * factor)

    def __add__(self, other: "ForcingSignal") -> "ForcingSignal":
        if self.kind != other.kind or not np.array_equal(self.times, other.times):
            raise ValueError("can only add forcing signals on the same time grid")
        return replace(self, values=self.values + other.values)

    def at(self, t: float) -> np.ndarray:
        """Force at time ``t`` (right-continuous for piecewise signals)."""
        if self.kind == "piecewise":
            i = int(np.searchsorted(self.times, t, side="right")) - 1
            i = min(max(i, 0), len(self.values) - 1)
            return self.values[i]
        return self._interp(t)

    def _interp(self, t: float) -> np.ndarray:
        times = self.times
        if t <= times[0]:
            return self.values[0]
        if t >= times[-1]:
            return self.values[-1]
        i = int(np.searchsorted(times, t, side="right")) - 1
        w = (t - times[i]) / (times[i + 1] - times[i])
        if w == 0.0:
            return self.values[i]
        return (1.0 - w) * self.values[i] + w * self.values[i + 1]

    def stage_fn(self, t0: float, h: float) -> Callable[[float], np.ndarray]:
        """Force at stage times ``t0 + c h`` of a step inside one segment."""
        if self.kind == "piecewise":
            g = self.at(t0 + 0.5 * h)
            return lambda c: g
        return lambda c: self._interp(t0 + c * h)

    def breakpoints(self) -> np.ndarray:
        return self.times


@dataclass(frozen=True, eq=False)
class KickSequence:
    """Kicks ``eta_1 .. eta_k``; kick ``i`` acts on ``[(i-1) T, i T)``.

    ``kicks`` has shape ``(k, *batch, size)``.
    """

    T: float
    M: int
    kicks: np.ndarray = field(repr=False)

    def __post_init__(self):
        kicks = np.asarray(self.kicks, dtype=np.float64)
        if not self.T > 0:
            raise ValueError("segment length T must be positive")
        if kicks.ndim < 2 or kicks.shape[0] < 1:
            raise ValueError("need at least one kick")
        if kicks.shape[-1] != basis(self.M).size:
            raise ValueError("kicks do not match the truncation")
        kicks.setflags(write=False)
        object.__setattr__(self, "kicks", kicks)

    @classmethod
    def from_fields(cls, T: float, fields: Sequence[SpectralField]) -> "KickSequence":
        return cls(T, fields[0].M, np.stack([f.coeffs for f in fields]))

    @property
    def k(self) -> int:
        return self.kicks.shape[0]

    def __len__(self) -> int:
        return self.k

    def field(self, i: int) -> SpectralField:
        return SpectralField(self.M, self.kicks[i])

    def forcing(self) -> ForcingSignal:
        breaks = self.T * np.arange(self.k + 1)
        return ForcingSignal(self.M, "piecewise", breaks, self.kicks)


# ---------------------------------------------------------------------------
# nonlinear terms
# ---------------------------------------------------------------------------

def bilinear(u: SpectralField, v: SpectralField, method: str = DIRECT) -> SpectralField:
    """B(u, v): Leray projection of (u . grad) v, truncated to the box."""
    if u.M != v.M:
        raise ValueError(f"mismatched truncations {u.M} and {v.M}")
    return SpectralField(u.M, engine(u.M).bilinear(u.coeffs, v.coeffs, method))


def rhs(u: SpectralField, g: SpectralField, nu: float, method: str = DIRECT) -> SpectralField:
    """``g - nu L u - B(u, u)``."""
    if u.M != g.M:
        raise ValueError(f"mismatched truncations {u.M} and {g.M}")
    e = engine(u.M)
    c = u.coeffs
    return SpectralField(u.M, g.coeffs - nu * u.basis.eig * c - e.quadratic(c, method))


# ---------------------------------------------------------------------------
# stepping
# ---------------------------------------------------------------------------

def _plan(breaks: np.ndarray, t_end: float, dt: float, t_start: float = 0.0):
    """Yield ``(t0, h)`` for steps covering [t_start, t_end] aligned to ``breaks``."""
    cuts = [t_start] + [b for b in breaks if t_start < b < t_end] + [t_end]
    for a, b in zip(cuts[:-1], cuts[1:]):
        n = max(1, int(math.ceil((b - a) / dt - 1e-9)))
        h = (b - a) / n
        for i in range(n):
            yield a + i * h, h


class _Lawson:
    """Integrating-factor RK for a list of states sharing the decay rates."""

    def __init__(self, rates: np.ndarray, scheme: str):
        self.rates = rates
        self.scheme = scheme
        self._cache: dict[float, tuple] = {}

    def factors(self, h):
        f = self._cache.get(h)
        if f is None:
            f = (np.exp(-self.rates * h), np.exp(-self.rates * 0.5 * h))
            if len(self._cache) > 64:
                self._cache.clear()
            self._cache[h] = f
        return f

    def step(self, ys, h, N):
        E, E2 = self.factors(h)
        if self.scheme == "exp_rk2":
            k1 = N(0.0, ys)
            y1 = [E * (y + h * a) for y, a in zip(ys, k1)]
            k2 = N(1.0, y1)
            return [E * (y + 0.5 * h * a) + 0.5 * h * b for y, a, b in zip(ys, k1, k2)]
        k1 = N(0.0, ys)
        y2 = [E2 * (y + 0.5 * h * a) for y, a in zip(ys, k1)]
        k2 = N(0.5, y2)
        y3 = [E2 * y + 0.5 * h * b for y, b in zip(ys, k2)]
        k3 = N(0.5, y3)
        y4 = [E * y + h * E2 * c for y, c in zip(ys, k3)]
        k4 = N(1.0, y4)
        return [
            E * (y + (h / 6.0) * a) + (h / 3.0) * E2 * (b + c) + (h / 6.0) * d
            for y, a, b, c, d in zip(ys, k1, k2, k3, k4)
        ]


@dataclass
class Trajectory:
    """Snapshots recorded by :func:`resolve_coeffs`."""

    M: int
    times: list = field(default_factory=list)
    states: list = field(default_factory=list)

    def to_csv(self, fh=None) -> str:
        """CSV with columns ``t`` and one per basis id (batch rows flattened)."""
        ids = [str(b) for b in basis(self.M).ids]
        buf = io.StringIO() if fh is None else fh
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t"] + ids)
        for t, s in zip(self.times, self.states):
            for row in np.reshape(s, (-1, len(ids))):
                w.writerow([repr(float(t))] + [repr(float(x)) for x in row])
        return buf.getvalue() if fh is None else ""


def _check(c, ref, step, t, factor):
    norms = np.sqrt(np.sum(c * c, axis=-1))
    bad = ~np.isfinite(norms) | (norms > factor * ref)
    if np.any(bad):
        rows = np.flatnonzero(np.reshape(bad, -1)) if np.ndim(bad) else None
        raise DivergenceError(step, t, rows)


def resolve_coeffs(c0, forcing: ForcingSignal | None, t: float, p: SimParams,
                   record: Sequence[float] | None = None, trajectory: Trajectory | None = None,
                   t_start: float = 0.0):
    """Advance coefficient array(s) ``c0`` from ``t_start`` to ``t``.

    ``record``: optional times at which snapshots are stored in ``trajectory``
    (rounded to the nearest step end).
    """
    c = np.array(c0, dtype=np.float64)
    if forcing is not None and not (0.0 <= t <= forcing.horizon + 1e-12):
        raise ValueError(f"t={t} outside forcing horizon {forcing.horizon}")
    if t < t_start:
        raise ValueError("t must be >= t_start")
    b = basis(p.M)
    if c.shape[-1] != b.size:
        raise ValueError("initial state does not match the truncation")
    eng = engine(p.M)
    method = p.nonlinearity
    lawson = _Lawson(p.nu * b.eig, p.integrator)
    ref = np.maximum(np.sqrt(np.sum(c * c, axis=-1)), 1.0)
    breaks = forcing.breakpoints() if forcing is not None else np.array([0.0])
    rec = sorted(record) if record is not None else []
    if trajectory is not None and rec and rec[0] <= t_start:
        trajectory.times.append(t_start)
        trajectory.states.append(c.copy())
        rec = [r for r in rec if r > t_start]
    step = -1
    for step, (t0, h) in enumerate(_plan(breaks, t, p.dt, t_start)):
        gf = forcing.stage_fn(t0, h) if forcing is not None else None

        def N(cst, ys):
            q = -eng.quadratic(ys[0], method)
            if gf is not None:
                q = q + gf(cst)
            return [q]

        c = lawson.step([c], h, N)[0]
        _check(c, ref, step, t0 + h, p.blowup_factor)
        while trajectory is not None and rec and rec[0] <= t0 + h + 0.5 * h:
            trajectory.times.append(t0 + h)
            trajectory.states.append(c.copy())
            rec.pop(0)
    if c.ndim == 1 and not np.isfinite(c).all():  # pragma: no cover
        raise DivergenceError(step, t)
    return c


def resolve(u0: SpectralField, f: ForcingSignal | None, t: float, p: SimParams) -> SpectralField:
    """Galerkin approximation of u(t) started from ``u0`` under force ``f``."""
    c = resolve_coeffs(_coeffs(u0, p.M), f, t, p)
    return SpectralField(p.M, c)


def kick_chain(ks: KickSequence, u0, p: SimParams):
    """u(kT) for the piecewise-constant force assembled from the kicks.

    Returns a :class:`SpectralField` for unbatched input, otherwise an array.
    """
    if ks.M != p.M:
        raise ValueError("kicks do not match the truncation")
    c = resolve_coeffs(_coeffs(u0, p.M), ks.forcing(), ks.k * ks.T, p)
    if c.ndim == 1:
        return SpectralField(p.M, c)
    return c


def rescaled_kick_chain(ks: KickSequence, u0, p: SimParams):
    """The right side of  S_k(T, u0, eta) = T^-1 R_k(T nu, T u0, T^2 g_hat).

    Solves the problem on unit segments with viscosity ``T nu``, initial state
    ``T u0`` and kicks ``T^2 eta``, with time step ``dt / T``, and returns the
    state at ``s = k`` divided by ``T``.
    """
    T = ks.T
    q = replace(p, nu=T * p.nu, dt=p.dt / T)
    unit = KickSequence(1.0, ks.M, (T * T) * ks.kicks)
    c0 = T * _coeffs(u0, p.M)
    c = resolve_coeffs(c0, unit.forcing(), float(ks.k), q) / T
    if c.ndim == 1:
        return SpectralField(p.M, c)
    return c


def tangent_resolve(u0, f: ForcingSignal | None, du0, df: ForcingSignal | None, t: float,
                    p: SimParams):
    """Solution of the linearized equation along the trajectory from ``u0``.

    Integrates  theta' + nu L theta + B(theta, u) + B(u, theta) = df  with
    theta(0) = du0, using the same steps as the base trajectory, so the result
    is the exact derivative of the discrete flow.  ``du0`` and ``df`` may carry
    a batch axis (one column per direction); ``u0`` must not.
    """
    M = p.M
    b = basis(M)
    c = np.array(_coeffs(u0, M), dtype=np.float64)
    if c.ndim != 1:
        raise ValueError("tangent_resolve takes a single base trajectory")
    th = np.array(_coeffs(du0, M), dtype=np.float64)
    if df is not None:
        th = th + np.zeros(df.batch_shape + (b.size,))
    eng = engine(M)
    method = p.nonlinearity
    lawson = _Lawson(p.nu * b.eig, p.integrator)
    cuts = [np.array([0.0])]
    if f is not None:
        cuts.append(f.breakpoints())
    if df is not None:
        cuts.append(df.breakpoints())
    breaks = np.unique(np.concatenate(cuts))
    ref = max(float(np.sqrt(c @ c)), 1.0)
    for step, (t0, h) in enumerate(_plan(breaks, t, p.dt)):
        gf = f.stage_fn(t0, h) if f is not None else None
        dg = df.stage_fn(t0, h) if df is not None else None

        def N(cst, ys):
            u, th_ = ys
            qu = -eng.quadratic(u, method)
            qt = -eng.symmetric(u, th_, method)
            if gf is not None:
                qu = qu + gf(cst)
            if dg is not None:
                qt = qt + dg(cst)
            return [qu, qt]

        c, th = lawson.step([c, th], h, N)
        _check(c, ref, step, t0 + h, p.blowup_factor)
        if not np.isfinite(th).all():
            raise DivergenceError(step, t0 + h)
    if th.ndim == 1:
        return SpectralField(M, th)
    return th


def substituted_resolve(u0, h: ForcingSignal | None, zeta: ForcingSignal, t: float,
                        p: SimParams):
    """u(t) = v(t) + zeta(t) where v solves the shifted equation

        v' + nu L v + B(v + zeta, v + zeta) = h - nu L zeta,   v(0) = u0,

    which is the equation for ``u - zeta`` when ``u`` is driven by
    ``h + d zeta / dt``.  ``zeta`` is a sampled path with ``zeta(0) = 0``,
    linearly interpolated between samples; batch axes of ``zeta`` broadcast
    against ``u0``.
    """
    M = p.M
    b = basis(M)
    if zeta.kind != "sampled":
        raise ValueError("zeta must be a sampled path")
    if np.any(zeta.values[0] != 0.0):
        raise ValueError("zeta must vanish at t = 0")
    v = np.array(_coeffs(u0, M), dtype=np.float64) + np.zeros(zeta.batch_shape + (b.size,))
    eng = engine(M)
    method = p.nonlinearity
    rates = p.nu * b.eig
    lawson = _Lawson(rates, p.integrator)
    cuts = [zeta.breakpoints()] + ([h.breakpoints()] if h is not None else [])
    breaks = np.unique(np.concatenate(cuts))
    ref = np.maximum(np.sqrt(np.sum(v * v, axis=-1)), 1.0)
    for step, (t0, dt) in enumerate(_plan(breaks, t, p.dt)):
        hf = h.stage_fn(t0, dt) if h is not None else None
        zf = zeta.stage_fn(t0, dt)

        def N(cst, ys):
            z = zf(cst)
            q = -eng.quadratic(ys[0] + z, method) - rates * z
            if hf is not None:
                q = q + hf(cst)
            return [q]

        v = lawson.step([v], dt, N)[0]
        _check(v, ref, step, t0 + dt, p.blowup_factor)
    u = v + zeta.at(t)
    if u.ndim == 1:
        return SpectralField(M, u)
    return u
