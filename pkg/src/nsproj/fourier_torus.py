"""Trigonometric eigenbasis of the Stokes operator on the 2-torus.

Every divergence-free field on [0, 2*pi)^2 is written as a real coefficient
vector over the L2-normalized family

    e_j = sin(j.x) j_perp / (sqrt(2) pi |j|)   for j1 > 0, or j1 = 0 and j2 > 0
    e_j = cos(j.x) j_perp / (sqrt(2) pi |j|)   for j1 < 0, or j1 = 0 and j2 < 0
    e0^1 = (1, 0) / (2 pi),  e0^2 = (0, 1) / (2 pi)

with j_perp = (-j2, j1).  The Stokes eigenvalue of e_j is |j|^2, and 0 for the
two mean modes.  Truncation keeps the box |j|_inf <= M.

Ordering is by (eigenvalue, j1, j2); mean modes come first (axis 1, then 2).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "AliasingError",
    "Basis",
    "BasisId",
    "SpectralField",
    "SubspaceSpec",
    "TruncationError",
    "basis",
    "basis_enumerate",
    "basis_manifest",
    "evaluate_physical",
    "norm_h",
    "norm_v",
    "project",
    "embed",
]

NORM_OSC = math.sqrt(2.0) * math.pi
NORM_MEAN = 2.0 * math.pi
# e_j has Fourier amplitude -(c_cos + i c_sin) / AMP_OSC at the sin-kind wavevector
AMP_OSC = 2.0 * NORM_OSC


class TruncationError(ValueError):
    """A basis id lies outside the truncation box of a field."""


class AliasingError(ValueError):
    """A physical grid is too coarse for the field's truncation."""


@dataclass(frozen=True)
class BasisId:
    """Label of one basis function.

    Mean modes have ``j == (0, 0)`` and ``axis`` in {1, 2}; oscillatory modes
    have ``axis == 0`` and ``j != (0, 0)``.
    """

    j: tuple[int, int]
    axis: int = 0

    def __post_init__(self):
        j = (int(self.j[0]), int(self.j[1]))
        object.__setattr__(self, "j", j)
        if self.axis not in (0, 1, 2):
            raise ValueError(f"bad axis {self.axis}")
        if (self.axis == 0) == (j == (0, 0)):
            raise ValueError(f"inconsistent basis id j={j} axis={self.axis}")

    @classmethod
    def mean(cls, axis: int) -> "BasisId":
        return cls((0, 0), axis)

    @classmethod
    def osc(cls, j1: int, j2: int) -> "BasisId":
        return cls((j1, j2), 0)

    @property
    def is_mean(self) -> bool:
        return self.axis != 0

    @property
    def kind(self) -> str:
        if self.is_mean:
            return "mean"
        j1, j2 = self.j
        return "sin" if (j1 > 0 or (j1 == 0 and j2 > 0)) else "cos"

    @property
    def eigenvalue(self) -> int:
        return self.j[0] ** 2 + self.j[1] ** 2

    @property
    def radius(self) -> int:
        return max(abs(self.j[0]), abs(self.j[1]))

    def sort_key(self):
        return (self.eigenvalue, self.j[0], self.j[1], self.axis)

    def __str__(self) -> str:
        if self.is_mean:
            return f"e0^{self.axis}"
        return f"({self.j[0]},{self.j[1]})"

    @classmethod
    def parse(cls, text: str) -> "BasisId":
        """Inverse of ``str``: ``"e0^1"``, ``"e0^2"`` or ``"(j1,j2)"``."""
        s = text.strip().replace(" ", "")
        if s in ("e0^1", "e0^2"):
            return cls.mean(int(s[-1]))
        if s.startswith("(") and s.endswith(")"):
            parts = s[1:-1].split(",")
            if len(parts) == 2:
                try:
                    return cls.osc(int(parts[0]), int(parts[1]))
                except ValueError:
                    pass
        raise ValueError(f"cannot parse basis id {text!r}")


def basis_enumerate(M: int) -> list[BasisId]:
    """All basis ids with ``|j|_inf <= M`` in canonical order."""
    if M < 1:
        raise ValueError("truncation M must be >= 1")
    ids = [BasisId.mean(1), BasisId.mean(2)]
    osc = [
        BasisId.osc(j1, j2)
        for j1 in range(-M, M + 1)
        for j2 in range(-M, M + 1)
        if (j1, j2) != (0, 0)
    ]
    osc.sort(key=BasisId.sort_key)
    return ids + osc


def _lattice_first(n: int) -> list[BasisId]:
    out: list[BasisId] = []
    R = 1
    while True:
        ids = basis_enumerate(R)[2:]
        # every point with |j|^2 <= R^2 lies in the box of radius R
        safe = [i for i in ids if i.eigenvalue <= R * R]
        if len(safe) >= n:
            return safe[:n]
        R += 1


class Basis:
    """Index tables for truncation ``M``; obtain through :func:`basis`."""

    def __init__(self, M: int):
        self.M = M
        self.ids: tuple[BasisId, ...] = tuple(basis_enumerate(M))
        self.size = len(self.ids)
        self.index = {bid: i for i, bid in enumerate(self.ids)}
        self.j = np.array([bid.j for bid in self.ids], dtype=np.int64)
        self.eig = np.array([bid.eigenvalue for bid in self.ids], dtype=np.float64)
        self.mean_mask = np.array([bid.is_mean for bid in self.ids])
        # half-plane representatives p (p1 > 0 or p1 == 0, p2 > 0); each owns a
        # sin id at j = p and a cos id at j = -p
        reps = [bid.j for bid in self.ids if bid.kind == "sin"]
        self.reps = np.array(reps, dtype=np.int64)
        self.sin_idx = np.array([self.index[BasisId.osc(*p)] for p in reps])
        self.cos_idx = np.array([self.index[BasisId.osc(-p[0], -p[1])] for p in reps])
        self.rep_norm = np.sqrt((self.reps ** 2).sum(axis=1)).astype(np.float64)

    def __repr__(self) -> str:
        return f"Basis(M={self.M}, size={self.size})"

    def idx(self, bid: BasisId) -> int:
        try:
            return self.index[bid]
        except KeyError:
            raise TruncationError(f"basis id {bid} outside truncation M={self.M}") from None

    def first_n(self, n: int, include_mean: bool = False) -> "SubspaceSpec":
        return SubspaceSpec.first_n(n, include_mean).check_within(self.M)

    def manifest(self) -> list[dict]:
        return [
            {
                "index": i,
                "id": str(bid),
                "kind": bid.kind,
                "j": list(bid.j),
                "axis": bid.axis,
                "eigenvalue": bid.eigenvalue,
            }
            for i, bid in enumerate(self.ids)
        ]


@lru_cache(maxsize=None)
def basis(M: int) -> Basis:
    return Basis(M)


def basis_manifest(M: int, path=None) -> str:
    """JSON manifest of the ordering and normalization for truncation ``M``."""
    doc = {
        "truncation": M,
        "ordering": "eigenvalue, then j1, then j2; mean modes e0^1, e0^2 first",
        "normalization": {
            "oscillatory": "trig(j.x) j_perp / (sqrt(2) pi |j|)",
            "mean": "unit vector / (2 pi)",
        },
        "ids": basis(M).manifest(),
    }
    text = json.dumps(doc, indent=1)
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text + "\n")
    return text


@dataclass(frozen=True)
class SubspaceSpec:
    """Ordered list of distinct basis ids spanning a coordinate subspace."""

    ids: tuple[BasisId, ...]

    def __post_init__(self):
        ids = tuple(self.ids)
        object.__setattr__(self, "ids", ids)
        if len(set(ids)) != len(ids):
            raise ValueError("subspace ids must be distinct")

    @classmethod
    def of(cls, items: Iterable) -> "SubspaceSpec":
        out = []
        for it in items:
            if isinstance(it, BasisId):
                out.append(it)
            elif isinstance(it, str):
                out.append(BasisId.parse(it))
            else:
                out.append(BasisId.osc(*it))
        return cls(tuple(out))

    @classmethod
    def first_n(cls, n: int, include_mean: bool = False) -> "SubspaceSpec":
        """The first ``n`` eigenfunctions in canonical order (H_N)."""
        if n < 0:
            raise ValueError("n must be nonnegative")
        if include_mean:
            head = [BasisId.mean(1), BasisId.mean(2)][:n]
            return cls(tuple(head + _lattice_first(n - len(head))))
        return cls(tuple(_lattice_first(n)))

    @property
    def dim(self) -> int:
        return len(self.ids)

    def __len__(self) -> int:
        return len(self.ids)

    def __iter__(self):
        return iter(self.ids)

    @property
    def radius(self) -> int:
        return max((bid.radius for bid in self.ids), default=0)

    def check_within(self, M: int) -> "SubspaceSpec":
        for bid in self.ids:
            if bid.radius > M:
                raise TruncationError(f"basis id {bid} outside truncation M={M}")
        return self

    def indices(self, M: int) -> np.ndarray:
        b = basis(M)
        return np.array([b.idx(bid) for bid in self.ids], dtype=np.int64)

    def labels(self) -> list[str]:
        return [str(b) for b in self.ids]


@dataclass(frozen=True, eq=False)
class SpectralField:
    """Divergence-free field given by coefficients in ``basis(M)`` order.

    ``coeffs`` is stored as a read-only float64 copy.
    """

    M: int
    coeffs: np.ndarray = field(repr=False)

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=np.float64)
        if c.shape != (basis(self.M).size,):
            raise ValueError(
                f"expected {basis(self.M).size} coefficients for M={self.M}, got {c.shape}"
            )
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def zeros(cls, M: int) -> "SpectralField":
        return cls(M, np.zeros(basis(M).size))

    @classmethod
    def unit(cls, M: int, bid, scale: float = 1.0) -> "SpectralField":
        if not isinstance(bid, BasisId):
            bid = BasisId.osc(*bid) if not isinstance(bid, str) else BasisId.parse(bid)
        c = np.zeros(basis(M).size)
        c[basis(M).idx(bid)] = scale
        return cls(M, c)

    @classmethod
    def from_dict(cls, M: int, coeffs: Mapping) -> "SpectralField":
        c = np.zeros(basis(M).size)
        for key, val in coeffs.items():
            bid = key if isinstance(key, BasisId) else BasisId.parse(str(key))
            c[basis(M).idx(bid)] = val
        return cls(M, c)

    @property
    def basis(self) -> Basis:
        return basis(self.M)

    def to_dict(self, nonzero_only: bool = True) -> dict[str, float]:
        return {
            str(bid): float(v)
            for bid, v in zip(self.basis.ids, self.coeffs)
            if v != 0.0 or not nonzero_only
        }

    def __getitem__(self, bid) -> float:
        if not isinstance(bid, BasisId):
            bid = BasisId.osc(*bid)
        return float(self.coeffs[self.basis.idx(bid)])

    def _check(self, other: "SpectralField"):
        if not isinstance(other, SpectralField):
            return NotImplemented
        if other.M != self.M:
            raise ValueError(f"mismatched truncations {self.M} and {other.M}")
        return None

    def __add__(self, other):
        if self._check(other) is NotImplemented:
            return NotImplemented
        return SpectralField(self.M, self.coeffs + other.coeffs)

    def __sub__(self, other):
        if self._check(other) is NotImplemented:
            return NotImplemented
        return SpectralField(self.M, self.coeffs - other.coeffs)

    def __mul__(self, scalar):
        return SpectralField(self.M, self.coeffs * float(scalar))

    __rmul__ = __mul__

    def __neg__(self):
        return SpectralField(self.M, -self.coeffs)

    def dot(self, other: "SpectralField") -> float:
        """H inner product."""
        self._check(other)
        return float(self.coeffs @ other.coeffs)

    def stokes(self) -> "SpectralField":
        """Apply the Stokes operator L (coefficientwise |j|^2)."""
        return SpectralField(self.M, self.coeffs * self.basis.eig)

    def retruncate(self, M: int) -> "SpectralField":
        """Copy into truncation ``M``; raises if nonzero modes would be lost."""
        out = np.zeros(basis(M).size)
        for bid, v in zip(self.basis.ids, self.coeffs):
            if bid.radius <= M:
                out[basis(M).index[bid]] = v
            elif v != 0.0:
                raise TruncationError(f"mode {bid} nonzero and outside M={M}")
        return SpectralField(M, out)

    def allclose(self, other: "SpectralField", atol=1e-12, rtol=0.0) -> bool:
        return self.M == other.M and np.allclose(self.coeffs, other.coeffs, atol=atol, rtol=rtol)

    def __eq__(self, other):
        if not isinstance(other, SpectralField):
            return NotImplemented
        return self.M == other.M and np.array_equal(self.coeffs, other.coeffs)

    __hash__ = None


def project(u: SpectralField, F: SubspaceSpec) -> np.ndarray:
    """Coefficients of ``u`` on the ids of ``F``, in ``F``'s order."""
    F.check_within(u.M)
    return u.coeffs[F.indices(u.M)].copy()


def embed(values: Sequence[float], F: SubspaceSpec, M: int) -> SpectralField:
    """Field in truncation ``M`` with coefficients ``values`` on ``F``."""
    F.check_within(M)
    values = np.asarray(values, dtype=np.float64)
    if values.shape != (F.dim,):
        raise ValueError(f"expected {F.dim} values")
    c = np.zeros(basis(M).size)
    c[F.indices(M)] = values
    return SpectralField(M, c)


def norm_h(u) -> float:
    c = u.coeffs if isinstance(u, SpectralField) else np.asarray(u)
    return float(np.sqrt(np.sum(c * c)))


def norm_v(u) -> float:
    if isinstance(u, SpectralField):
        c, eig = u.coeffs, u.basis.eig
    else:
        c = np.asarray(u)
        eig = _eig_for_size(c.shape[-1])
    return float(np.sqrt(np.sum((1.0 + eig) * c * c)))


def _eig_for_size(n: int) -> np.ndarray:
    M = int(round((math.sqrt(n + 1) - 1) / 2))
    if basis(M).size != n:
        raise ValueError(f"{n} is not a basis size")
    return basis(M).eig


def physical_modes(u: SpectralField) -> np.ndarray:
    """Fourier series coefficients of the velocity on the full box.

    Returns complex array of shape ``(2, 2M+1, 2M+1)`` indexed by
    ``[component, k1 + M, k2 + M]`` with ``u(x) = sum_k uhat(k) exp(i k.x)``.
    """
    b = u.basis
    M = b.M
    out = np.zeros((2, 2 * M + 1, 2 * M + 1), dtype=np.complex128)
    c = u.coeffs
    a = -(c[b.cos_idx] + 1j * c[b.sin_idx]) / AMP_OSC
    perp = np.stack([-b.reps[:, 1], b.reps[:, 0]]) / b.rep_norm
    p1, p2 = b.reps[:, 0] + M, b.reps[:, 1] + M
    out[:, p1, p2] = a * perp
    out[:, 2 * M - p1 + 0, 2 * M - p2] = np.conj(a) * perp  # uhat(-p) = conj(uhat(p))
    out[0, M, M] = c[0] / NORM_MEAN
    out[1, M, M] = c[1] / NORM_MEAN
    return out


def evaluate_physical(u: SpectralField, n: int) -> np.ndarray:
    """Velocity on the ``n x n`` grid ``x = 2 pi (i, k) / n``; shape ``(2, n, n)``."""
    if n < 2 * u.M + 2:
        raise AliasingError(f"grid n={n} too small for M={u.M}; need n >= {2 * u.M + 2}")
    M = u.M
    modes = physical_modes(u)
    grid = np.zeros((2, n, n), dtype=np.complex128)
    ks = np.arange(-M, M + 1) % n
    grid[:, ks[:, None], ks[None, :]] = modes
    return np.real(np.fft.ifft2(grid, axes=(-2, -1)) * (n * n))


def spectral_divergence(field_xy: np.ndarray) -> np.ndarray:
    """Divergence of a periodic grid field computed by FFT."""
    n = field_xy.shape[-1]
    k = np.fft.fftfreq(n, 1.0 / n)
    f1 = np.fft.fft2(field_xy[0])
    f2 = np.fft.fft2(field_xy[1])
    div = 1j * k[:, None] * f1 + 1j * k[None, :] * f2
    return np.real(np.fft.ifft2(div))
