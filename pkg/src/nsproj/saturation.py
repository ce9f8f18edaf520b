"""Growth of symmetric lattice sets under the pair rule

    l = m + n,   |m| != |n|,   m1 n2 - m2 n1 != 0,

coverage checks on finite boxes, and the forcing subspaces spanned by a set.
"""
from __future__ import annotations

import json
import re
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from ._kernels import grow_bitmap
from .fourier_torus import BasisId, SubspaceSpec, TruncationError

Point = tuple[int, int]

_PAIR = re.compile(r"\(\s*(-?\d+)\s*,\s*(-?\d+)\s*\)")


class SetLiteralError(ValueError):
    pass


@dataclass(frozen=True)
class SymmetricSet:
    """Finite subset of Z^2 that contains the origin and is closed under j -> -j."""

    elems: frozenset

    def __post_init__(self):
        pts = set()
        for j in self.elems:
            a, b = int(j[0]), int(j[1])
            pts.add((a, b))
        if (0, 0) not in pts:
            raise ValueError("set must contain (0, 0)")
        for a, b in pts:
            if (-a, -b) not in pts:
                raise ValueError(f"set is not symmetric: ({a},{b}) present without its negative")
        object.__setattr__(self, "elems", frozenset(pts))

    @classmethod
    def generated_by(cls, points: Iterable) -> "SymmetricSet":
        """Symmetrize ``points`` and add the origin."""
        pts = {(0, 0)}
        for j in points:
            a, b = int(j[0]), int(j[1])
            pts.add((a, b))
            pts.add((-a, -b))
        return cls(frozenset(pts))

    @classmethod
    def parse(cls, text: str) -> "SymmetricSet":
        """Parse a literal such as ``"(1,0),(1,1)"``; the result is symmetrized."""
        body = text.strip()
        if not body:
            raise SetLiteralError("empty set literal")
        pts = []
        pos = 0
        for m in _PAIR.finditer(body):
            gap = body[pos:m.start()].strip()
            if gap not in ("", ",") or (pts and gap != ","):
                raise SetLiteralError(f"malformed set literal near {body[pos:m.end()]!r}")
            pts.append((int(m.group(1)), int(m.group(2))))
            pos = m.end()
        if not pts or body[pos:].strip():
            raise SetLiteralError(f"malformed set literal {text!r}")
        return cls.generated_by(pts)

    def __contains__(self, j) -> bool:
        return (int(j[0]), int(j[1])) in self.elems

    def __len__(self) -> int:
        return len(self.elems)

    def __iter__(self):
        return iter(sorted(self.elems))

    def __le__(self, other: "SymmetricSet") -> bool:
        return self.elems <= other.elems

    @property
    def radius(self) -> int:
        return max(max(abs(a), abs(b)) for a, b in self.elems)

    def sorted(self) -> list[Point]:
        return sorted(self.elems, key=lambda j: (j[0] ** 2 + j[1] ** 2, j[0], j[1]))

    def literal(self) -> str:
        return ",".join(f"({a},{b})" for a, b in self.sorted())


def _as_set(K) -> SymmetricSet:
    if isinstance(K, SymmetricSet):
        return K
    if isinstance(K, str):
        return SymmetricSet.parse(K)
    return SymmetricSet.generated_by(K)


def _admissible(m: Point, n: Point) -> bool:
    return (m[0] * m[0] + m[1] * m[1] != n[0] * n[0] + n[1] * n[1]
            and m[0] * n[1] - m[1] * n[0] != 0)


def grow_once(K) -> SymmetricSet:
    """K together with every admissible sum m + n of two of its points."""
    K = _as_set(K)
    pts = np.array(sorted(K.elems), dtype=np.int64)
    sq = (pts ** 2).sum(axis=1)
    wedge = pts[:, None, 0] * pts[None, :, 1] - pts[:, None, 1] * pts[None, :, 0]
    ok = (sq[:, None] != sq[None, :]) & (wedge != 0)
    sums = (pts[:, None, :] + pts[None, :, :])[ok]
    new = set(K.elems)
    new.update(map(tuple, sums.tolist()))
    return SymmetricSet(frozenset(new))


def closure_bfs(K, R: int, work_radius: int | None = None) -> set[Point]:
    """Points of the box ``|l|_inf <= R`` reachable from K by the pair rule.

    Worklist closure: every newly found point is paired with every point
    already known.  Only points with ``|l|_inf <= work_radius`` are kept, so the
    answer is a subset of the true closure restricted to the box (exact when
    nothing reachable leaves the working box).  Independent of the iterated
    bitmap growth used by :func:`saturating_within`.
    """
    K = _as_set(K)
    W = max(2 * R, R + K.radius, K.radius) if work_radius is None else work_radius
    known = {j for j in K.elems if max(abs(j[0]), abs(j[1])) <= W}
    order = list(known)
    queue = deque(order)
    while queue:
        m = queue.popleft()
        for n in list(order):
            if not _admissible(m, n):
                continue
            l = (m[0] + n[0], m[1] + n[1])
            if max(abs(l[0]), abs(l[1])) > W or l in known:
                continue
            known.add(l)
            order.append(l)
            queue.append(l)
    return {j for j in known if max(abs(j[0]), abs(j[1])) <= R}


@dataclass
class CoverageReport:
    R: int
    covered: bool
    iters: int
    fixed_point: bool
    max_iter_hit: bool
    missing: list = field(default_factory=list)
    frontier_sizes: list = field(default_factory=list)
    work_radius: int = 0
    generator: str = ""

    @property
    def status(self) -> str:
        if self.covered:
            return "covered"
        if self.fixed_point:
            return "fixed_point"
        return "max_iter"

    def to_dict(self) -> dict:
        return {
            "generator": self.generator,
            "R": self.R,
            "work_radius": self.work_radius,
            "covered": self.covered,
            "status": self.status,
            "iters": self.iters,
            "fixed_point": self.fixed_point,
            "max_iter_hit": self.max_iter_hit,
            "frontier_sizes": list(self.frontier_sizes),
            "missing": [list(j) for j in self.missing],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _box_mask(points, W: int) -> np.ndarray:
    mask = np.zeros((2 * W + 1, 2 * W + 1), dtype=np.bool_)
    for a, b in points:
        if max(abs(a), abs(b)) <= W:
            mask[a + W, b + W] = True
    return mask


def saturating_within(K, R: int, max_iter: int = 50, work_radius: int | None = None
                      ) -> CoverageReport:
    """Iterate :func:`grow_once` until the box ``|l|_inf <= R`` is covered,
    nothing new appears, or ``max_iter`` iterations have run.

    Iterates are tracked on the working box ``|l|_inf <= W`` (default
    ``max(2R, R + radius(K))``).  Points leaving it are dropped, so every point
    reported as reached is genuinely reached (coverage is never overstated).
    A fixed point is reported only when one step of the unrestricted rule adds
    nothing at all.
    """
    if R < 0:
        raise ValueError("R must be >= 0")
    K = _as_set(K)
    W = max(2 * R, R + K.radius) if work_radius is None else int(work_radius)
    if W < max(R, K.radius):
        raise ValueError("work_radius must contain both the box and the generator")
    mask = _box_mask(K.elems, W)
    inner = slice(W - R, W + R + 1)
    frontier = [len(K)]
    it = 0
    fixed = False
    while True:
        if mask[inner, inner].all():
            break
        if it >= max_iter:
            break
        new = grow_bitmap(mask, W)
        it += 1
        frontier.append(int(new.sum() - mask.sum()))
        if frontier[-1] == 0:
            # nothing new inside the working box; check the unrestricted step
            pts = np.argwhere(mask) - W
            fixed = _as_tuple_set(pts) == grow_once(_as_tuple_set(pts)).elems
            mask = new
            break
        mask = new
    covered = bool(mask[inner, inner].all())
    miss = np.argwhere(~mask[inner, inner]) - R
    missing = sorted(map(tuple, miss.tolist()), key=lambda j: (j[0] ** 2 + j[1] ** 2, j))
    return CoverageReport(R=R, covered=covered, iters=it, fixed_point=fixed,
                          max_iter_hit=(not covered and not fixed and it >= max_iter),
                          missing=missing, frontier_sizes=frontier, work_radius=W,
                          generator=K.literal())


def _as_tuple_set(pts) -> frozenset:
    return frozenset(map(tuple, np.asarray(pts).tolist()))


def subspace_of(K, M: int, include_mean: bool = False) -> SubspaceSpec:
    """Basis ids of ``e_j`` for ``j`` in K minus the origin (truncation ``M``)."""
    K = _as_set(K)
    ids = [BasisId.osc(a, b) for a, b in K.sorted() if (a, b) != (0, 0)]
    if include_mean:
        ids = [BasisId.mean(1), BasisId.mean(2)] + ids
    spec = SubspaceSpec.of(ids)
    if spec.radius > M:
        far = [str(i) for i in ids if i.radius > M]
        raise TruncationError(f"ids {', '.join(far)} exceed truncation M={M}")
    return spec
