"""Random forces built from products of independent scalar laws.

A :class:`CoefficientLaw` draws  xi = sum_j b_j xi_j g_j  where the ``g_j`` are
basis functions, ``b_j >= 0`` and the ``xi_j`` are independent with unit
second moment.  Samplers take an :class:`RngStream`, a Philox counter-based
generator keyed by ``(seed, stream)``; distinct stream ids give independent
draws, and the same pair always reproduces the same numbers.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import integrate, stats

from .dynamics import ForcingSignal, KickSequence
from .fourier_torus import BasisId, SpectralField, SubspaceSpec, basis

__all__ = [
    "CoefficientLaw",
    "RngStream",
    "ScalarLaw",
    "clopper_pearson",
    "gaussian",
    "sample_colored_gaussian",
    "sample_decomposable",
    "sample_kicks",
    "sample_wiener_path",
    "support_ball_probe",
    "tabulated",
    "uniform",
]

_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class RngStream:
    seed: int
    stream: int = 0

    def __post_init__(self):
        for name in ("seed", "stream"):
            v = int(getattr(self, name))
            if not 0 <= v <= _MASK64:
                raise ValueError(f"{name} must fit in 64 unsigned bits")
            object.__setattr__(self, name, v)

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.Philox(key=self.seed | (self.stream << 64)))

    def child(self, stream: int) -> "RngStream":
        return RngStream(self.seed, stream)


# ---------------------------------------------------------------------------
# scalar laws
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ScalarLaw:
    """A one-dimensional law with a density, unit second moment and 0 in its support."""

    name: str
    sampler: Callable[[np.random.Generator, tuple], np.ndarray] = field(repr=False)
    pdf: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    support: tuple[float, float] = (-math.inf, math.inf)

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        return self.sampler(rng, size)

    def second_moment(self) -> float:
        lo, hi = self.support
        val, _ = integrate.quad(lambda x: x * x * self.pdf(np.array(x)), lo, hi, limit=200)
        return val


_SQ3 = math.sqrt(3.0)

gaussian = ScalarLaw(
    "gaussian",
    lambda rng, size: rng.standard_normal(size),
    lambda x: np.exp(-0.5 * np.asarray(x) ** 2) / math.sqrt(2 * math.pi),
)

uniform = ScalarLaw(
    "uniform",
    lambda rng, size: rng.uniform(-_SQ3, _SQ3, size),
    lambda x: np.where(np.abs(x) <= _SQ3, 1.0 / (2 * _SQ3), 0.0),
    (-_SQ3, _SQ3),
)


def tabulated(xs: Sequence[float], density: Sequence[float], name: str = "custom") -> ScalarLaw:
    """Law with piecewise-linear density on the grid ``xs``.

    The density is renormalized, then the variable is rescaled to unit second
    moment.  Raises if the density vanishes at 0.
    """
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(density, dtype=float)
    if xs.ndim != 1 or xs.shape != ys.shape or len(xs) < 2 or np.any(np.diff(xs) <= 0):
        raise ValueError("density must be tabulated on an increasing grid")
    if np.any(ys < 0):
        raise ValueError("density must be nonnegative")
    ys = ys / np.trapezoid(ys, xs)
    a, b, f0, f1 = xs[:-1], xs[1:], ys[:-1], ys[1:]
    # exact integral of x^2 times the linear interpolant on each cell
    m2 = float(np.sum((b - a) / 12.0 * (f0 * (3 * a * a + 2 * a * b + b * b)
                                        + f1 * (a * a + 2 * a * b + 3 * b * b))))
    s = 1.0 / math.sqrt(m2)
    xs_s, ys_s = xs * s, ys / s
    if not xs_s[0] < 0 < xs_s[-1] or np.interp(0.0, xs_s, ys_s) <= 0:
        raise ValueError("0 must lie in the support of the law")
    # exact inverse cdf of a piecewise-linear density
    dx = np.diff(xs_s)
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (ys_s[1:] + ys_s[:-1]) * dx)])
    cdf /= cdf[-1]

    def sampler(rng, size):
        u = rng.random(size)
        i = np.clip(np.searchsorted(cdf, u, side="right") - 1, 0, len(dx) - 1)
        f0 = ys_s[i]
        slope = (ys_s[i + 1] - f0) / dx[i]
        r = u - cdf[i]
        with np.errstate(divide="ignore", invalid="ignore"):
            quad = (-f0 + np.sqrt(np.maximum(f0 * f0 + 2 * slope * r, 0.0))) / slope
        lin = np.where(f0 > 0, r / np.where(f0 > 0, f0, 1.0), 0.0)
        step = np.where(np.abs(slope) > 1e-14, quad, lin)
        return xs_s[i] + np.clip(step, 0.0, dx[i])

    return ScalarLaw(name, sampler, lambda x: np.interp(x, xs_s, ys_s, left=0.0, right=0.0),
                     (float(xs_s[0]), float(xs_s[-1])))


LAWS = {"gaussian": gaussian, "uniform": uniform}


# ---------------------------------------------------------------------------
# coefficient laws
# ---------------------------------------------------------------------------

def b_rule(rule: str, n: int, scale: float = 1.0) -> np.ndarray:
    """Built-in amplitude sequences indexed by rank ``r = 1..n``."""
    r = np.arange(1, n + 1, dtype=float)
    if rule == "geometric":
        b = 2.0 ** (-r)
    elif rule == "polynomial":
        b = 1.0 / r
    elif rule in ("finite", "ones"):
        b = np.ones(n)
    else:
        raise ValueError(f"unknown b-rule {rule!r}")
    return scale * b


def b_rule_sum_sq(rule: str, n: int | None = None, scale: float = 1.0) -> float:
    """Closed form of sum b_r^2 (``n=None`` means the infinite series)."""
    s2 = scale * scale
    if rule == "geometric":
        return s2 * (1.0 / 3.0 if n is None else (1.0 - 4.0 ** (-n)) / 3.0)
    if rule == "polynomial":
        if n is None:
            return s2 * math.pi ** 2 / 6.0
        return s2 * float(np.sum(1.0 / np.arange(1, n + 1) ** 2))
    if rule in ("finite", "ones"):
        if n is None:
            raise ValueError("finite rule needs n")
        return s2 * n
    raise ValueError(f"unknown b-rule {rule!r}")


@dataclass(frozen=True, eq=False)
class CoefficientLaw:
    """Amplitudes ``b`` and scalar laws on the ids of ``ids``."""

    ids: SubspaceSpec
    b: np.ndarray
    laws: tuple[ScalarLaw, ...]
    rule: str = "explicit"

    def __post_init__(self):
        b = np.asarray(self.b, dtype=np.float64)
        if b.shape != (self.ids.dim,):
            raise ValueError("need one amplitude per id")
        if np.any(b < 0) or not np.all(np.isfinite(b)):
            raise ValueError("amplitudes must be finite and nonnegative")
        laws = tuple(self.laws)
        if len(laws) == 1 and self.ids.dim != 1:
            laws = laws * self.ids.dim
        if len(laws) != self.ids.dim:
            raise ValueError("need one scalar law per id")
        b.setflags(write=False)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "laws", laws)

    @classmethod
    def build(cls, ids: SubspaceSpec, rule: str = "ones", law: str | ScalarLaw = "gaussian",
              scale: float = 1.0) -> "CoefficientLaw":
        sl = LAWS[law] if isinstance(law, str) else law
        return cls(ids, b_rule(rule, ids.dim, scale), (sl,), rule)

    @property
    def dim(self) -> int:
        return self.ids.dim

    def sum_sq(self) -> float:
        return float(np.sum(self.b ** 2))

    def forced(self) -> SubspaceSpec:
        """Ids with nonzero amplitude (the space H_0)."""
        return SubspaceSpec(tuple(i for i, bj in zip(self.ids.ids, self.b) if bj != 0.0))

    def _uniform_law(self) -> ScalarLaw | None:
        first = self.laws[0]
        return first if all(l is first for l in self.laws) else None

    def draw_xi(self, rng: np.random.Generator, lead: tuple = ()) -> np.ndarray:
        """Raw scalar draws of shape ``lead + (dim,)``."""
        law = self._uniform_law()
        if law is not None:
            return law.sample(rng, lead + (self.dim,))
        cols = [l.sample(rng, lead) for l in self.laws]
        return np.stack(cols, axis=-1)

    def draw(self, rng: np.random.Generator, M: int, lead: tuple = ()) -> np.ndarray:
        """Coefficient arrays ``lead + (basis(M).size,)``."""
        out = np.zeros(lead + (basis(M).size,))
        out[..., self.ids.indices(M)] = self.b * self.draw_xi(rng, lead)
        return out

    def to_config(self) -> dict:
        return {
            "ids": self.ids.labels(),
            "rule": self.rule,
            "b": [float(x) for x in self.b],
            "law": [l.name for l in self.laws] if self._uniform_law() is None else self.laws[0].name,
        }


def _gen(rng) -> np.random.Generator:
    if isinstance(rng, RngStream):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    raise TypeError("rng must be an RngStream or numpy Generator")


def sample_decomposable(cl: CoefficientLaw, rng, M: int, n: int | None = None):
    """One field (``n=None``) or an ``(n, size)`` array of independent draws."""
    g = _gen(rng)
    if n is None:
        return SpectralField(M, cl.draw(g, M))
    return cl.draw(g, M, (n,))


def sample_kicks(cl: CoefficientLaw, k: int, T: float, rng, M: int) -> KickSequence:
    """``k`` i.i.d. kicks, drawn in order from one stream."""
    if k < 1:
        raise ValueError("k must be >= 1")
    return KickSequence(T, M, cl.draw(_gen(rng), M, (k,)))


def _steps(T: float, dt: float) -> int:
    n = int(round(T / dt))
    if n < 1 or abs(n * dt - T) > 1e-9 * max(1.0, T):
        raise ValueError("dt must divide T")
    return n


def sample_wiener_path(cl: CoefficientLaw, T: float, dt: float, rng, M: int,
                       lead: tuple = ()) -> ForcingSignal:
    """zeta(t) = sum_j b_j beta_j(t) g_j sampled on the grid ``0, dt, .., T``.

    The scalar laws of ``cl`` are ignored: Brownian increments are Gaussian.
    Increments are drawn step by step, shape ``(steps,) + lead + (dim,)``.
    """
    n = _steps(T, dt)
    g = _gen(rng)
    inc = g.standard_normal((n,) + lead + (cl.dim,)) * math.sqrt(dt)
    path = np.zeros((n + 1,) + lead + (basis(M).size,))
    path[1:, ..., cl.ids.indices(M)] = np.cumsum(inc, axis=0) * cl.b
    return ForcingSignal(M, "sampled", np.linspace(0.0, T, n + 1), path)


def sample_colored_gaussian(cl: CoefficientLaw, tau: float, T: float, dt: float, rng, M: int,
                            lead: tuple = ()) -> ForcingSignal:
    """Stationary Ornstein-Uhlenbeck force with covariance b_j^2 exp(-|t-s|/tau).

    Uses the exact AR(1) transition on the grid, started from the stationary
    law; the path is linearly interpolated between grid points.
    """
    if not tau > 0:
        raise ValueError("correlation time must be positive")
    n = _steps(T, dt)
    g = _gen(rng)
    rho = math.exp(-dt / tau)
    s = math.sqrt(1.0 - rho * rho)
    z = g.standard_normal((n + 1,) + lead + (cl.dim,))
    x = np.empty_like(z)
    x[0] = z[0]
    for i in range(1, n + 1):
        x[i] = rho * x[i - 1] + s * z[i]
    vals = np.zeros((n + 1,) + lead + (basis(M).size,))
    vals[..., cl.ids.indices(M)] = x * cl.b
    return ForcingSignal(M, "sampled", np.linspace(0.0, T, n + 1), vals)


def clopper_pearson(k: int, n: int, alpha: float = 0.05) -> tuple[float, float]:
    """Exact two-sided binomial confidence interval for ``k / n``."""
    lo = 0.0 if k == 0 else float(stats.beta.ppf(alpha / 2, k, n - k + 1))
    hi = 1.0 if k == n else float(stats.beta.ppf(1 - alpha / 2, k + 1, n - k))
    return lo, hi


@dataclass(frozen=True)
class ProbeResult:
    hits: int
    n: int
    ci: tuple[float, float]

    @property
    def fraction(self) -> float:
        return self.hits / self.n


def support_ball_probe(cl: CoefficientLaw, x, eps: float, n_draws: int, rng,
                       chunk: int = 200_000) -> ProbeResult:
    """Count draws with ``||xi - x||_H <= eps``.

    ``x`` is a :class:`SpectralField` or a vector over ``cl.ids``.  Only the
    coordinates in ``cl.ids`` are drawn; any component of ``x`` outside them
    adds a constant to the squared distance.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    if isinstance(x, SpectralField):
        idx = cl.ids.indices(x.M)
        xv = x.coeffs[idx]
        off = float(x.coeffs @ x.coeffs - xv @ xv)
    else:
        xv = np.asarray(x, dtype=float)
        off = 0.0
    g = _gen(rng)
    hits = 0
    left = n_draws
    e2 = eps * eps - off
    while left > 0 and e2 >= 0:
        m = min(chunk, left)
        xi = cl.b * cl.draw_xi(g, (m,))
        d2 = np.sum((xi - xv) ** 2, axis=1)
        hits += int(np.count_nonzero(d2 <= e2))
        left -= m
    return ProbeResult(hits, n_draws, clopper_pearson(hits, n_draws))
