"""Hexagonal lattice indexing, shifts, invariant blocks and boxes.

A site is ``(j, k, sub)`` where ``j`` and ``k`` are coefficients of the two
span vectors of the A sublattice and ``sub`` selects A or B.  A basis element
adds a coin index in ``{1, 2, 3}``.  The global basis order is lexicographic in
``(j, k, sub, coin)`` with A before B.
"""

from __future__ import annotations

import enum
import math
from collections import deque
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Iterable, NamedTuple

import numpy as np

from .errors import DomainError, SizeError


class Sub(enum.IntEnum):
    A = 0
    B = 1


class Site(NamedTuple):
    j: int
    k: int
    sub: Sub

    def __repr__(self) -> str:
        return f"Site({self.j}, {self.k}, {Sub(self.sub).name})"


class BasisElement(NamedTuple):
    site: Site
    coin: int

    @property
    def key(self) -> tuple[int, int, int, int]:
        return (self.site.j, self.site.k, int(self.site.sub), self.coin)


class BlockId(NamedTuple):
    j: int
    k: int


ORIGIN = Site(0, 0, Sub.A)

# _SHIFT[sub][d - 1] is the (dj, dk) offset of S_d; the sublattice always flips.
_SHIFT = np.array(
    [
        [(0, -1), (1, -1), (0, 0)],   # from A
        [(-1, 1), (0, 0), (0, 1)],    # from B
    ],
    dtype=np.int64,
)


def make_site(j: int, k: int, sub: int | Sub | str) -> Site:
    if isinstance(sub, str):
        sub = Sub[sub.upper()]
    return Site(int(j), int(k), Sub(sub))


def element(j: int, k: int, sub, coin: int) -> BasisElement:
    return BasisElement(make_site(j, k, sub), int(coin))


def shift_target(pos: Site, direction: int) -> Site:
    """Site reached from ``pos`` by the shift S_direction."""
    if direction not in (1, 2, 3):
        raise DomainError(f"shift direction must be 1, 2 or 3, got {direction!r}")
    dj, dk = _SHIFT[int(pos.sub), direction - 1]
    return Site(pos.j + int(dj), pos.k + int(dk), Sub(1 - int(pos.sub)))


def shift_arrays(j, k, sub, direction: int):
    """Vectorized shift_target on integer arrays."""
    off = _SHIFT[np.asarray(sub, dtype=np.int64), direction - 1]
    return j + off[..., 0], k + off[..., 1], 1 - np.asarray(sub)


def neighbors(pos: Site) -> list[Site]:
    """The three nearest neighbours of ``pos``; index d-1 is reached by S_d."""
    return [shift_target(pos, d) for d in (1, 2, 3)]


def position(site: Site) -> tuple[float, float]:
    """Euclidean position with unit bond length (A(0,0) at the origin)."""
    x = math.sqrt(3.0) * (site.j + 0.5 * site.k)
    y = 1.5 * site.k + (1.0 if site.sub == Sub.B else 0.0)
    return x, y


class _BFSTable:
    """Lazily grown breadth-first distance table from a fixed source site."""

    def __init__(self, source: Site):
        self.dist = {source: 0}
        self.frontier = deque([source])
        self.radius = 0

    def grow_to(self, radius: int) -> None:
        while self.radius < radius:
            nxt = deque()
            for s in self.frontier:
                for t in neighbors(s):
                    if t not in self.dist:
                        self.dist[t] = self.radius + 1
                        nxt.append(t)
            self.frontier = nxt
            self.radius += 1

    def lookup(self, rel: Site) -> int:
        radius = max(self.radius, 1)
        while rel not in self.dist:
            radius *= 2
            self.grow_to(radius)
        return self.dist[rel]


_TABLES = {Sub.A: _BFSTable(Site(0, 0, Sub.A)), Sub.B: _BFSTable(Site(0, 0, Sub.B))}


def graph_distance(x: Site, y: Site) -> int:
    """Shortest edge-path length between two sites (memoized BFS)."""
    rel = Site(y.j - x.j, y.k - x.k, Sub(y.sub))
    return _TABLES[Sub(x.sub)].lookup(rel)


def distance_array(x: Site, j, k, sub) -> np.ndarray:
    """Graph distances from ``x`` to many sites given as integer arrays."""
    j = np.asarray(j, dtype=np.int64) - x.j
    k = np.asarray(k, dtype=np.int64) - x.k
    sub = np.asarray(sub, dtype=np.int64)
    if j.size == 0:
        return np.zeros(0, dtype=np.int64)
    table = _TABLES[Sub(x.sub)]
    # every relative offset is within |j| + |k| + 2 hops of the source
    table.grow_to(int(np.max(np.abs(j)) + np.max(np.abs(k))) * 2 + 2)
    r = table.radius
    dense = np.full((2 * r + 1, 2 * r + 1, 2), -1, dtype=np.int64)
    for s, d in table.dist.items():
        if abs(s.j) <= r and abs(s.k) <= r:
            dense[s.j + r, s.k + r, int(s.sub)] = d
    out = dense[j + r, k + r, sub]
    if np.any(out < 0):  # pragma: no cover - guarded by the growth bound
        raise RuntimeError("distance table too small")
    return out


def block_of(b: BasisElement) -> BlockId:
    """The invariant block H^{j,k} that contains ``b``."""
    s = b.site
    if s.sub == Sub.A:
        return BlockId(s.j, s.k)
    if b.coin == 3:
        return BlockId(s.j, s.k)
    if b.coin == 1:
        return BlockId(s.j, s.k + 1)
    if b.coin == 2:
        return BlockId(s.j - 1, s.k + 1)
    raise DomainError(f"coin index must be 1, 2 or 3, got {b.coin!r}")


def block_arrays(j, k, sub, coin):
    """Vectorized block_of; returns block coordinates (bj, bk)."""
    j = np.asarray(j)
    k = np.asarray(k)
    is_b = np.asarray(sub) == 1
    coin = np.asarray(coin)
    bj = j - (is_b & (coin == 2))
    bk = k + (is_b & (coin != 3))
    return bj, bk


def block_elements(block: BlockId) -> list[BasisElement]:
    """The six generators of H^{j,k}, in their natural order."""
    j, k = block
    return [
        element(j, k, Sub.A, 1),
        element(j, k, Sub.A, 2),
        element(j, k, Sub.A, 3),
        element(j, k, Sub.B, 3),
        element(j, k - 1, Sub.B, 1),
        element(j + 1, k - 1, Sub.B, 2),
    ]


def a_representative(b: BasisElement) -> BasisElement:
    """The Γ_A element of the same block with the same coin index."""
    blk = block_of(b)
    return BasisElement(Site(blk.j, blk.k, Sub.A), b.coin)


def closure(elements: Iterable[BasisElement]) -> set[BasisElement]:
    """Add all coin siblings of every site present in ``elements``."""
    sites = {b.site for b in elements}
    return {BasisElement(s, c) for s in sites for c in (1, 2, 3)}


@dataclass(frozen=True)
class BoxSpec:
    """The box Λ_L translated by an A-site ``origin``."""

    L1: int
    L2: int
    origin: Site = ORIGIN

    def __post_init__(self):
        if int(self.L1) < 1 or int(self.L2) < 1:
            raise SizeError(f"box sides must be >= 1, got ({self.L1}, {self.L2})")
        if Sub(self.origin.sub) != Sub.A:
            raise DomainError("box origin must be an A site")

    @property
    def volume(self) -> int:
        return 4 * self.L1 * self.L2 - 1

    @property
    def norm(self) -> float:
        return math.hypot(self.L1, self.L2)

    def translated(self, dj: int, dk: int) -> "BoxSpec":
        o = self.origin
        return BoxSpec(self.L1, self.L2, Site(o.j + dj, o.k + dk, Sub.A))


def interior_block_mask(box: BoxSpec, bj, bk) -> np.ndarray:
    """True where block (bj, bk) belongs to H_L of ``box``."""
    bj = np.asarray(bj) - box.origin.j
    bk = np.asarray(bk) - box.origin.k
    L1, L2 = box.L1, box.L2
    return (bj >= -L1) & (bj <= L1 - 1) & (bk >= -L2) & (bk <= L2 - 1) & (bj + bk > -L1 - L2)


def forced_site_mask(box: BoxSpec, j, k, sub) -> np.ndarray:
    """True where the site belongs to Γ_{C0}^{(L)} of ``box``."""
    j = np.asarray(j) - box.origin.j
    k = np.asarray(k) - box.origin.k
    L1, L2 = box.L1, box.L2
    top = (j >= -L1) & (j <= L1 - 1) & (k == L2 - 1)
    bottom = (j >= -L1 + 1) & (j <= L1) & (k == -L2 - 1)
    side = ((j == L1) | (j == -L1)) & (k >= -L2) & (k <= L2 - 2)
    return (np.asarray(sub) == 1) & (top | bottom | side)


def boundary_coin_sites(box: BoxSpec) -> frozenset[Site]:
    """Γ_{C0}^{(L)}: B sites whose coin is forced to C0."""
    L1, L2 = box.L1, box.L2
    rel = [(j, L2 - 1) for j in range(-L1, L1)]
    rel += [(j, -L2 - 1) for j in range(-L1 + 1, L1 + 1)]
    rel += [(L1, k) for k in range(-L2, L2 - 1)]
    rel += [(-L1, k) for k in range(-L2, L2 - 1)]
    o = box.origin
    return frozenset(Site(o.j + j, o.k + k, Sub.B) for j, k in rel)


@dataclass(frozen=True, eq=False)
class BoxIndex:
    """Sorted interior basis of a box with vectorized lookup tables."""

    box: BoxSpec
    j: np.ndarray
    k: np.ndarray
    sub: np.ndarray
    coin: np.ndarray
    _lut: np.ndarray = field(repr=False)
    _lo: tuple[int, int] = field(repr=False)
    _shape: tuple[int, int] = field(repr=False)

    @property
    def dim(self) -> int:
        return int(self.j.size)

    def __len__(self) -> int:
        return self.dim

    def element(self, i: int) -> BasisElement:
        return BasisElement(Site(int(self.j[i]), int(self.k[i]), Sub(int(self.sub[i]))), int(self.coin[i]))

    @property
    def elements(self) -> tuple[BasisElement, ...]:
        return _elements_of(self)

    def lookup(self, j, k, sub, coin) -> np.ndarray:
        """Basis indices for integer arrays; -1 where not interior."""
        j = np.asarray(j, dtype=np.int64) - self._lo[0]
        k = np.asarray(k, dtype=np.int64) - self._lo[1]
        ok = (j >= 0) & (j < self._shape[0]) & (k >= 0) & (k < self._shape[1])
        flat = ((np.where(ok, j, 0) * self._shape[1] + np.where(ok, k, 0)) * 6
                + np.asarray(sub, dtype=np.int64) * 3 + np.asarray(coin, dtype=np.int64) - 1)
        return np.where(ok, self._lut[flat], -1)

    def index_of(self, b: BasisElement) -> int:
        i = int(self.lookup(b.site.j, b.site.k, int(b.site.sub), b.coin))
        if i < 0:
            raise SizeError(f"{b} is not in the interior of {self.box}")
        return i

    def contains(self, b: BasisElement) -> bool:
        blk = block_of(b)
        return bool(interior_block_mask(self.box, blk.j, blk.k))

    def sites(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Unique interior sites as (j, k, sub) arrays in basis order."""
        first = np.ones(self.dim, dtype=bool)
        first[1:] = (self.j[1:] != self.j[:-1]) | (self.k[1:] != self.k[:-1]) | (self.sub[1:] != self.sub[:-1])
        return self.j[first], self.k[first], self.sub[first]


@lru_cache(maxsize=64)
def _elements_of(index: BoxIndex) -> tuple[BasisElement, ...]:
    return tuple(index.element(i) for i in range(index.dim))


@lru_cache(maxsize=64)
def box_index(box: BoxSpec) -> BoxIndex:
    """Build (and cache) the sorted interior basis of ``box``."""
    L1, L2 = box.L1, box.L2
    bj, bk = np.meshgrid(np.arange(-L1, L1), np.arange(-L2, L2), indexing="ij")
    keep = bj + bk > -L1 - L2
    bj = bj[keep] + box.origin.j
    bk = bk[keep] + box.origin.k
    # the six generators of every block
    j = np.concatenate([bj, bj, bj, bj, bj, bj + 1])
    k = np.concatenate([bk, bk, bk, bk, bk - 1, bk - 1])
    sub = np.concatenate([np.zeros(3 * bj.size, np.int64), np.ones(3 * bj.size, np.int64)])
    coin = np.concatenate([np.full(bj.size, c) for c in (1, 2, 3, 3, 1, 2)])
    order = np.lexsort((coin, sub, k, j))
    j, k, sub, coin = (a[order].astype(np.int64) for a in (j, k, sub, coin))
    lo = (int(j.min()), int(k.min()))
    shape = (int(j.max()) - lo[0] + 1, int(k.max()) - lo[1] + 1)
    lut = np.full(shape[0] * shape[1] * 6, -1, dtype=np.int64)
    flat = ((j - lo[0]) * shape[1] + (k - lo[1])) * 6 + sub * 3 + coin - 1
    lut[flat] = np.arange(j.size)
    for a in (j, k, sub, coin, lut):
        a.setflags(write=False)
    return BoxIndex(box, j, k, sub, coin, lut, lo, shape)


@dataclass(frozen=True)
class Partition:
    """H_L as an explicit set plus an O(1) membership test."""

    box: BoxSpec
    interior: frozenset[BasisElement]

    def contains(self, b: BasisElement) -> bool:
        blk = block_of(b)
        return bool(interior_block_mask(self.box, blk.j, blk.k))

    def is_exterior(self, b: BasisElement) -> bool:
        return not self.contains(b)


def partition(box: BoxSpec) -> Partition:
    return Partition(box, frozenset(box_index(box).elements))


def boundaries(box: BoxSpec) -> tuple[set[BasisElement], set[BasisElement], Callable]:
    """(∂Λ_L, ∂Λ_L^C, closure) for ``box``.

    Both boundary sets consist of elements whose site is forced to C0 or is
    adjacent to a forced site; they are split by interior membership.
    """
    forced = boundary_coin_sites(box)
    sites = set(forced)
    for s in forced:
        sites.update(neighbors(s))
    part = partition(box)
    inner, outer = set(), set()
    for s in sites:
        for c in (1, 2, 3):
            b = BasisElement(s, c)
            (inner if part.contains(b) else outer).add(b)
    return inner, outer, closure


def lattice_ray(start: Site, steps: tuple[int, int], length: int) -> list[Site]:
    """Sites visited by alternating shifts from ``start``.

    ``steps`` gives the shift direction used from A sites and from B sites.
    The returned list has ``length + 1`` sites and the i-th one is at graph
    distance i from ``start``; a non-geodesic choice raises DomainError.
    """
    out = [start]
    for _ in range(length):
        s = out[-1]
        out.append(shift_target(s, steps[int(s.sub)]))
    for i, s in enumerate(out):
        if graph_distance(start, s) != i:
            raise DomainError(f"ray {steps} is not a geodesic at step {i}")
    return out
