"""Monte Carlo ensembles of projected solutions and diagnostics on them.

An ensemble row is ``P_F u(t)`` for one trajectory; trajectory ``i`` draws all
its noise from ``RngStream(seed, stream0 + i)``, so any row can be rebuilt on
its own and the result does not depend on chunking or worker count.
"""
from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import stats

from .dynamics import (DivergenceError, ForcingSignal, KickSequence, SimParams, _coeffs,
                       resolve_coeffs, substituted_resolve)
from .forcing import (LAWS, CoefficientLaw, RngStream, clopper_pearson,
                      sample_colored_gaussian, sample_wiener_path)
from .fourier_torus import SpectralField, SubspaceSpec, basis

MODELS = ("kick", "colored", "white")


class EnsembleDivergence(RuntimeError):
    def __init__(self, stream: int, step: int, t: float):
        super().__init__(f"trajectory with stream id {stream} diverged at step {step} (t={t:.6g})")
        self.stream = stream
        self.step = step
        self.t = t


# ---------------------------------------------------------------------------
# forcing models
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ForcingModel:
    """Random force driving an ensemble.

    ``kick``: piecewise constant, an independent draw of ``law`` on each
    segment of length ``T``.  ``colored``: stationary Gaussian with
    correlation ``exp(-|t-s|/tau)`` per coefficient, sampled every
    ``noise_dt``.  ``white``: time derivative of the Wiener path
    ``sum_j b_j beta_j(t) e_j`` sampled every ``noise_dt`` (the scalar laws of
    ``law`` are ignored).  ``h`` is an optional deterministic force added to
    all three.
    """

    kind: str
    law: CoefficientLaw
    T: float = 1.0
    tau: float = 1.0
    noise_dt: float = 0.01
    h: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in MODELS:
            raise ValueError(f"model must be one of {MODELS}")
        if self.kind == "kick" and not self.T > 0:
            raise ValueError("kick segment T must be positive")
        if self.kind == "colored" and not self.tau > 0:
            raise ValueError("correlation time must be positive")
        if self.kind in ("colored", "white") and not self.noise_dt > 0:
            raise ValueError("noise_dt must be positive")

    def to_config(self) -> dict:
        cfg = {"kind": self.kind, "law": self.law.to_config()}
        if self.kind == "kick":
            cfg["T"] = self.T
        if self.kind == "colored":
            cfg["tau"] = self.tau
        if self.kind != "kick":
            cfg["noise_dt"] = self.noise_dt
        if self.h is not None:
            cfg["h"] = [float(x) for x in self.h]
        return cfg

    @classmethod
    def from_config(cls, cfg: dict) -> "ForcingModel":
        law = law_from_config(cfg["law"])
        h = cfg.get("h")
        return cls(cfg["kind"], law, T=float(cfg.get("T", 1.0)), tau=float(cfg.get("tau", 1.0)),
                   noise_dt=float(cfg.get("noise_dt", 0.01)),
                   h=None if h is None else np.asarray(h, dtype=np.float64))

    def digest(self) -> str:
        return _digest_obj(self.to_config())

    def zero_noise(self) -> "ForcingModel":
        return replace(self, law=CoefficientLaw(self.law.ids, np.zeros(self.law.dim),
                                                self.law.laws, "zero"))

    def segments(self, t: float) -> int:
        return max(1, int(math.ceil(t / self.T - 1e-9)))


def law_from_config(cfg: dict) -> CoefficientLaw:
    ids = SubspaceSpec.of(cfg["ids"])
    names = cfg.get("law", "gaussian")
    if isinstance(names, str):
        names = [names]
    try:
        laws = tuple(LAWS[n] for n in names)
    except KeyError as e:
        raise ValueError(f"unknown scalar law {e.args[0]!r}") from None
    return CoefficientLaw(ids, np.asarray(cfg["b"], dtype=np.float64), laws,
                          cfg.get("rule", "explicit"))


def _digest_obj(obj) -> str:
    text = json.dumps(obj, sort_keys=True, default=float)
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def _h_signal(model: ForcingModel, M: int, horizon: float):
    if model.h is None:
        return None
    return ForcingSignal.constant(np.asarray(model.h), horizon, M)


def _rows_forcing(model: ForcingModel, M: int, t: float, streams) -> ForcingSignal:
    """Batched forcing for the given stream ids (one row each)."""
    size = basis(M).size
    if model.kind == "kick":
        k = model.segments(t)
        vals = np.stack([model.law.draw(s.generator(), M, (k,)) for s in streams], axis=1)
        if model.h is not None:
            vals = vals + model.h
        return ForcingSignal(M, "piecewise", model.T * np.arange(k + 1), vals)
    horizon = model.noise_dt * max(1, int(math.ceil(t / model.noise_dt - 1e-9)))
    if model.kind == "colored":
        sigs = [sample_colored_gaussian(model.law, model.tau, horizon, model.noise_dt, s, M)
                for s in streams]
        vals = np.stack([g.values for g in sigs], axis=1)
        if model.h is not None:
            vals = vals + model.h
        return ForcingSignal(M, "sampled", sigs[0].times, vals)
    sigs = [sample_wiener_path(model.law, horizon, model.noise_dt, s, M) for s in streams]
    vals = np.stack([g.values for g in sigs], axis=1)
    assert vals.shape[-1] == size
    return ForcingSignal(M, "sampled", sigs[0].times, vals)


def simulate_rows(model: ForcingModel, u0, t: float, p: SimParams, seed: int, streams):
    """Full states ``u(t)`` for trajectories with the given stream ids."""
    M = p.M
    rs = [RngStream(seed, int(s)) for s in streams]
    c0 = np.asarray(_coeffs(u0, M), dtype=np.float64) + np.zeros((len(rs), basis(M).size))
    f = _rows_forcing(model, M, t, rs)
    try:
        if model.kind == "white":
            return substituted_resolve(c0, _h_signal(model, M, f.horizon), f, t, p)
        return resolve_coeffs(c0, f, t, p)
    except DivergenceError as e:
        row = int(e.rows[0]) if e.rows is not None and len(e.rows) else 0
        raise EnsembleDivergence(int(streams[row]), e.step, e.t) from None


def _chunk_job(args):
    model_cfg, u0, t, p, seed, lo, hi, fi = args
    model = ForcingModel.from_config(model_cfg)
    out = simulate_rows(model, u0, t, p, seed, range(lo, hi))
    return np.asarray(out)[:, fi]


# ---------------------------------------------------------------------------
# sample sets
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class SampleSet:
    samples: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.float64)
        if s.ndim == 1:
            s = s[:, None]
        if s.ndim != 2 or s.shape[0] < 1:
            raise ValueError("a sample set needs at least one row")
        if not np.isfinite(s).all():
            raise ValueError("sample set has non-finite rows")
        self.samples = s

    @property
    def n(self) -> int:
        return self.samples.shape[0]

    @property
    def d(self) -> int:
        return self.samples.shape[1]

    def regenerate(self, workers: int = 1) -> "SampleSet":
        return regenerate(self.meta, workers=workers)

    def save(self, path) -> None:
        from .io import write_ensemble
        write_ensemble(path, self.samples, self.meta)

    @classmethod
    def load(cls, path) -> "SampleSet":
        from .io import read_ensemble
        rows, meta = read_ensemble(path)
        return cls(rows, meta)


def run_ensemble(model: ForcingModel, u0, F: SubspaceSpec, t: float, n: int, p: SimParams,
                 seed: int = 0, stream0: int = 0, chunk: int = 2048,
                 workers: int = 1) -> SampleSet:
    """``n`` independent rows ``P_F u(t)``, trajectory ``i`` on stream ``stream0 + i``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if chunk < 1:
        raise ValueError("chunk must be >= 1")
    F.check_within(p.M)
    model.law.ids.check_within(p.M)
    c0 = np.asarray(_coeffs(u0, p.M), dtype=np.float64)
    fi = F.indices(p.M)
    bounds = [(lo, min(lo + chunk, n)) for lo in range(0, n, chunk)]
    cfg = model.to_config()
    jobs = [(cfg, c0, t, p, seed, stream0 + lo, stream0 + hi, fi) for lo, hi in bounds]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(_chunk_job, jobs))
    else:
        parts = [_chunk_job(j) for j in jobs]
    meta = {
        "kind": "ensemble",
        "t": t,
        "F": F.labels(),
        "model": cfg,
        "model_digest": model.digest(),
        "params": p.to_dict(),
        "params_digest": _digest_obj(p.to_dict()),
        "u0": [float(x) for x in c0],
        "seed": int(seed),
        "streams": [int(stream0), int(stream0 + n)],
        "n": int(n),
        "chunk": int(chunk),
        "dependent_rows": False,
    }
    return SampleSet(np.concatenate(parts, axis=0), meta)


def stationary_ensemble(model: ForcingModel, u0, F: SubspaceSpec, burn_in: int, k_max: int,
                        stride: int, p: SimParams, seed: int = 0, stream: int = 0) -> SampleSet:
    """Rows ``P_F u(kT)`` for ``k = burn_in, burn_in + stride, .., <= k_max`` along one
    kicked chain.  Rows are dependent; ``meta['dependent_rows']`` says so."""
    if model.kind != "kick":
        raise ValueError("stationary chains use the kick model")
    if not 0 <= burn_in < k_max:
        raise ValueError("need 0 <= burn_in < k_max")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    F.check_within(p.M)
    M = p.M
    kicks = model.law.draw(RngStream(seed, stream).generator(), M, (k_max,))
    if model.h is not None:
        kicks = kicks + model.h
    fi = F.indices(M)
    c = np.asarray(_coeffs(u0, M), dtype=np.float64).copy()
    rows = []
    if burn_in == 0:
        rows.append(c[fi].copy())
    for k in range(1, k_max + 1):
        f = ForcingSignal(M, "piecewise", np.array([0.0, model.T]), kicks[k - 1:k])
        try:
            c = resolve_coeffs(c, f, model.T, p)
        except DivergenceError as e:
            raise EnsembleDivergence(stream, e.step, (k - 1) * model.T + e.t) from None
        if k >= burn_in and (k - burn_in) % stride == 0:
            rows.append(c[fi].copy())
    meta = {
        "kind": "stationary",
        "F": F.labels(),
        "model": model.to_config(),
        "model_digest": model.digest(),
        "params": p.to_dict(),
        "params_digest": _digest_obj(p.to_dict()),
        "u0": [float(x) for x in np.asarray(_coeffs(u0, M))],
        "seed": int(seed),
        "stream": int(stream),
        "burn_in": burn_in,
        "k_max": k_max,
        "stride": stride,
        "dependent_rows": True,
    }
    return SampleSet(np.array(rows), meta)


def _params_from(d: dict) -> SimParams:
    keys = ("nu", "M", "dt", "integrator", "nonlinearity", "blowup_factor")
    return SimParams(**{k: d[k] for k in keys if k in d})


def regenerate(meta: dict, workers: int = 1) -> SampleSet:
    """Rebuild a sample set from its metadata."""
    p = _params_from(meta["params"])
    model = ForcingModel.from_config(meta["model"])
    F = SubspaceSpec.of(meta["F"])
    u0 = np.asarray(meta["u0"])
    if meta.get("kind") == "stationary":
        return stationary_ensemble(model, u0, F, meta["burn_in"], meta["k_max"], meta["stride"],
                                   p, meta["seed"], meta["stream"])
    lo, hi = meta["streams"]
    return run_ensemble(model, u0, F, meta["t"], hi - lo, p, meta["seed"], lo,
                        meta.get("chunk", 2048), workers)


# ---------------------------------------------------------------------------
# diagnostics
# ---------------------------------------------------------------------------

def _rows(S) -> np.ndarray:
    if isinstance(S, SampleSet):
        return S.samples
    a = np.asarray(S, dtype=np.float64)
    return a[:, None] if a.ndim == 1 else a


def atom_test(S, q: float) -> int:
    """Largest number of rows that coincide after rounding every coordinate down
    to a multiple of ``q``."""
    if not q > 0:
        raise ValueError("quantum must be positive")
    X = _rows(S)
    keys = np.floor(X / q)
    _, counts = np.unique(keys, axis=0, return_counts=True)
    return int(counts.max())


def collision_bound(n: int, q: float, density_max: float, d: int) -> float:
    """Union bound on the probability that some pair of ``n`` rows shares a
    cell of side ``q``, for a law whose density is at most ``density_max``."""
    return min(1.0, 0.5 * n * (n - 1) * density_max * q ** d)


@dataclass
class BallMass:
    center: np.ndarray
    radii: np.ndarray
    hits: np.ndarray
    n: int
    ci: np.ndarray
    slope: float
    d: int

    @property
    def masses(self) -> np.ndarray:
        return self.hits / self.n

    @property
    def atom_flag(self) -> bool:
        """Mass that does not shrink with the radius (slope below d / 2)."""
        return bool(self.slope < 0.5 * self.d)

    def rows(self):
        return [(float(r), int(h), float(h / self.n), float(lo), float(hi))
                for r, h, (lo, hi) in zip(self.radii, self.hits, self.ci)]

    def to_dict(self) -> dict:
        return {"center": [float(x) for x in self.center], "n": self.n, "d": self.d,
                "slope": self.slope, "atom_flag": self.atom_flag,
                "table": [dict(zip(("r", "hits", "mass", "ci_lo", "ci_hi"), r))
                          for r in self.rows()]}


def whiten(X: np.ndarray, center=None):
    """Affine map making the sample covariance the identity (identity map when
    the covariance is singular).  Returns (transformed rows, transformed center)."""
    X = _rows(X)
    mu = X.mean(axis=0)
    C = np.atleast_2d(np.cov(X, rowvar=False))
    try:
        Lc = np.linalg.cholesky(C)
    except np.linalg.LinAlgError:
        Lc = np.eye(X.shape[1])
    W = np.linalg.inv(Lc)
    c = mu if center is None else np.asarray(center, dtype=np.float64)
    return (X - mu) @ W.T, (c - mu) @ W.T


def auto_radii(S, center, m: int = 8, lo_count: int = 25, hi_frac: float = 0.1) -> np.ndarray:
    """Radii from the distance quantiles around ``center``: the smallest ball
    holds about ``lo_count`` rows, the largest a fraction ``hi_frac`` (but at
    least eight times as many rows, and at most half of them)."""
    X = _rows(S)
    dist = np.sort(np.sqrt(((X - center) ** 2).sum(axis=1)))
    n = len(dist)
    i0 = min(max(lo_count, 1), n) - 1
    i1 = min(max(int(hi_frac * n), 8 * (i0 + 1)), max(n // 2, i0 + 2), n) - 1
    r0, r1 = dist[i0], dist[i1]
    if r1 <= 0:
        return np.geomspace(1e-12, 1e-6, m)
    r0 = max(r0, r1 * 1e-6)
    return np.geomspace(r0, r1, m)


def ball_mass_curve(S, center=None, radii=None, standardize: bool = False,
                    alpha: float = 0.05) -> BallMass:
    """Fractions of rows in balls around ``center`` with Clopper-Pearson intervals,
    and the least-squares slope of log(mass) against log(radius).

    ``center`` defaults to the coordinatewise median; ``standardize`` whitens
    the rows first (radii are then in whitened units).
    """
    X = _rows(S)
    n, d = X.shape
    c = np.median(X, axis=0) if center is None else np.asarray(center, dtype=np.float64)
    if standardize:
        X, c = whiten(X, c)
    if radii is None:
        radii = auto_radii(X, c)
    radii = np.asarray(radii, dtype=np.float64)
    if np.any(np.diff(radii) <= 0) or radii[0] <= 0:
        raise ValueError("radii must be positive and increasing")
    dist = np.sqrt(((X - c) ** 2).sum(axis=1))
    hits = np.array([int(np.count_nonzero(dist <= r)) for r in radii])
    ci = np.array([clopper_pearson(int(h), n, alpha) for h in hits])
    ok = hits > 0
    if ok.sum() >= 2:
        slope = float(np.polyfit(np.log(radii[ok]), np.log(hits[ok] / n), 1)[0])
    else:
        slope = 0.0
    return BallMass(c, radii, hits, n, ci, slope, d)


@dataclass
class KDE:
    axes: list
    values: np.ndarray
    bandwidth: np.ndarray

    @property
    def cell(self) -> float:
        return float(np.prod([a[1] - a[0] for a in self.axes]))

    def integral(self) -> float:
        return float(self.values.sum() * self.cell)

    def mode(self) -> np.ndarray:
        i = np.unravel_index(int(np.argmax(self.values)), self.values.shape)
        return np.array([a[j] for a, j in zip(self.axes, i)])


_GRID_CAP = {1: 1024, 2: 256, 3: 64}


def silverman(X: np.ndarray) -> np.ndarray:
    n, d = X.shape
    sd = X.std(axis=0, ddof=1) if n > 1 else np.zeros(d)
    return sd * (4.0 / ((d + 2) * n)) ** (1.0 / (d + 4))


def kde(S, bandwidth=None, grid: int | None = None, pad: float = 6.0) -> KDE:
    """Gaussian product-kernel density on a regular grid (d <= 3).

    ``bandwidth``: ``None`` (Silverman's rule per coordinate), a scalar, or one
    value per coordinate.  Degenerate coordinates get a tiny bandwidth so the
    estimate is a sharp peak that still integrates to one.
    """
    X = _rows(S)
    n, d = X.shape
    if d > 3:
        raise ValueError("kde supports d <= 3")
    h = silverman(X) if bandwidth is None else np.broadcast_to(
        np.asarray(bandwidth, dtype=np.float64), (d,)).copy()
    scale = np.maximum(np.abs(X).max(axis=0), 1.0)
    h = np.maximum(h, 1e-6 * scale)
    lo = X.min(axis=0) - pad * h
    hi = X.max(axis=0) + pad * h
    axes, kern = [], []
    for i in range(d):
        m = grid or int(min(_GRID_CAP[d], max(32, math.ceil((hi[i] - lo[i]) / (0.5 * h[i])) + 1)))
        ax = np.linspace(lo[i], hi[i], m)
        axes.append(ax)
        z = (ax[None, :] - X[:, i:i + 1]) / h[i]
        kern.append(np.exp(-0.5 * z * z) / (h[i] * math.sqrt(2 * math.pi)))
    if d == 1:
        vals = kern[0].mean(axis=0)
    elif d == 2:
        vals = kern[0].T @ kern[1] / n
    else:
        vals = np.einsum("ni,nj,nk->ijk", kern[0], kern[1], kern[2], optimize=True) / n
    return KDE(axes, vals, h)


@dataclass
class TVEstimate:
    value: float
    ci: tuple
    bins: int
    n_boot: int

    def to_dict(self) -> dict:
        return {"tv": self.value, "ci_lo": self.ci[0], "ci_hi": self.ci[1],
                "bins_per_axis": self.bins, "n_boot": self.n_boot}


def _binned_tv(A, B, edges) -> float:
    ha, _ = np.histogramdd(A, bins=edges)
    hb, _ = np.histogramdd(B, bins=edges)
    return 0.5 * float(np.abs(ha / len(A) - hb / len(B)).sum())


def tv_estimate(S1, S2, bins: int = 16, n_boot: int = 200, seed: int = 0,
                alpha: float = 0.05) -> TVEstimate:
    """Half the L1 distance between the binned empirical laws (``bins`` per axis
    over the pooled range), with a percentile bootstrap interval."""
    A, B = _rows(S1), _rows(S2)
    if A.shape[1] != B.shape[1]:
        raise ValueError("sample sets have different dimensions")
    pooled = np.vstack([A, B])
    lo, hi = pooled.min(axis=0), pooled.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    edges = [np.linspace(lo[i], lo[i] + span[i], bins + 1) for i in range(A.shape[1])]
    for e in edges:
        e[-1] = np.nextafter(e[-1], np.inf)
    value = _binned_tv(A, B, edges)
    if n_boot > 0:
        g = RngStream(seed, 0).generator()
        boots = np.empty(n_boot)
        for b in range(n_boot):
            ia = g.integers(0, len(A), len(A))
            ib = g.integers(0, len(B), len(B))
            boots[b] = _binned_tv(A[ia], B[ib], edges)
        ci = (float(np.quantile(boots, alpha / 2)), float(np.quantile(boots, 1 - alpha / 2)))
    else:
        ci = (value, value)
    return TVEstimate(value, ci, bins, n_boot)


def tv_continuity_curve(model: ForcingModel, u0, direction, amplitudes, F: SubspaceSpec,
                        t: float, n: int, p: SimParams, seed: int = 0, bins: int = 16,
                        n_boot: int = 200, workers: int = 1) -> dict:
    """TV between the laws started at ``u0`` and at ``u0 + a * direction`` for
    each amplitude.  Every ensemble uses its own block of stream ids."""
    amps = [float(a) for a in amplitudes]
    if any(b >= a for a, b in zip(amps, amps[1:])):
        raise ValueError("amplitudes must be decreasing")
    c0 = np.asarray(_coeffs(u0, p.M), dtype=np.float64)
    e = np.asarray(_coeffs(direction, p.M), dtype=np.float64)
    base = run_ensemble(model, c0, F, t, n, p, seed, 0, workers=workers)
    rows = []
    for i, a in enumerate(amps):
        S = run_ensemble(model, c0 + a * e, F, t, n, p, seed, (i + 1) * n, workers=workers)
        est = tv_estimate(base, S, bins, n_boot, seed=i)
        rows.append({"amplitude": a, **est.to_dict()})
    tvs = [r["tv"] for r in rows]
    rho = float(stats.spearmanr(amps, tvs).statistic) if len(amps) > 1 else float("nan")
    monotone = all(rows[i + 1]["tv"] <= rows[i]["ci_hi"] for i in range(len(rows) - 1))
    return {"rows": rows, "spearman": rho, "monotone_within_ci": monotone}


def support_hit(S, y, eps: float) -> int:
    """Number of rows within distance ``eps`` of ``y``."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    X = _rows(S)
    y = np.asarray(y, dtype=np.float64)
    return int(np.count_nonzero(((X - y) ** 2).sum(axis=1) <= eps * eps))


def support_table(S, targets, eps: float) -> list[dict]:
    X = _rows(S)
    out = []
    for y in np.atleast_2d(targets):
        h = support_hit(X, y, eps)
        out.append({"target": [float(v) for v in y], "hits": h,
                    "ci": clopper_pearson(h, len(X))})
    return out


def _functional(f, M: int):
    """Callable on coefficient rows ``(n, size)`` from a spec.

    ``"zero"``, ``("coordinate", id)`` or ``("product", [ids])`` where ids are
    basis-id labels; a callable is passed through.
    """
    if callable(f):
        return f
    if f == "zero" or f == ("zero",):
        return lambda C: np.zeros(C.shape[0])
    kind, ids = f
    b = basis(M)
    if kind == "coordinate":
        i = SubspaceSpec.of([ids]).indices(M)[0]
        return lambda C: C[:, i]
    if kind == "product":
        idx = SubspaceSpec.of(ids).indices(M)
        return lambda C: np.prod(C[:, idx], axis=1)
    raise ValueError(f"unknown functional {f!r}")


def analytic_null_probe(law: CoefficientLaw, f, n: int, rng, M: int,
                        chunk: int = 200_000) -> dict:
    """Fraction of ``n`` decomposable draws on which ``f`` vanishes exactly."""
    fn = _functional(f, M)
    g = rng.generator() if isinstance(rng, RngStream) else rng
    zeros = 0
    left = n
    while left > 0:
        m = min(chunk, left)
        C = law.draw(g, M, (m,))
        zeros += int(np.count_nonzero(fn(C) == 0.0))
        left -= m
    return {"n": n, "zeros": zeros, "fraction": zeros / n}
