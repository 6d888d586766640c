"""Coins, disorder, and assembly of exactly unitary finite walk operators.

The walk is U_ω = D_ω S 𝒞: the coin acts first, the shift S_d moves coin
state d along direction d, and the phase multiplies the target element.
Finite operators live on the interior H_L of an ambient box whose boundary
ring Γ_{C0}^{(L)} carries the coin C0, which makes H_L exactly invariant.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .errors import ContractError, DomainError, NumericalError, SizeError
from .lattice import (
    BasisElement,
    BoxIndex,
    BoxSpec,
    Site,
    Sub,
    block_arrays,
    box_index,
    forced_site_mask,
    interior_block_mask,
    shift_arrays,
)

UNITARY_TOL = 1e-12

C0 = np.array([[0, 1, 0], [0, 0, 1], [1, 0, 0]], dtype=complex)
C0_TILDE = C0.T.copy()
IDENTITY = np.eye(3, dtype=complex)
SWAP12 = np.array([[0, 1, 0], [1, 0, 0], [0, 0, 1]], dtype=complex)


def coin_theta(theta: float) -> np.ndarray:
    """The one-parameter family C(θ) with C(0) = C0."""
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[0, c, s], [0, -s, c], [1, 0, 0]], dtype=complex)


def unitarity_defect(m: np.ndarray) -> float:
    m = np.asarray(m)
    return float(np.max(np.abs(m.conj().T @ m - np.eye(m.shape[0]))))


def check_coin(m, tol: float = UNITARY_TOL) -> np.ndarray:
    m = np.array(m, dtype=complex)
    if m.shape != (3, 3):
        raise ContractError(f"coin must be 3x3, got shape {m.shape}")
    if unitarity_defect(m) > tol:
        raise ContractError(f"coin is not unitary (defect {unitarity_defect(m):.3e})")
    return m


def dist_inf(a, b) -> float:
    """Max absolute entrywise difference ‖a − b‖_∞."""
    return float(np.max(np.abs(np.asarray(a) - np.asarray(b))))


def polar_unitary(m: np.ndarray) -> np.ndarray:
    """Closest unitary to ``m`` (polar factor)."""
    u, _, vh = np.linalg.svd(m)
    return u @ vh


def coin_near_c0(radius: float, seed: int, tol: float = 1e-6) -> np.ndarray:
    """Random unitary coin with ‖C − C0‖_∞ equal to ``radius`` within ``tol``.

    C(t) = C0 exp(tA) for a random anti-Hermitian A; t is found by bisection.
    """
    if not 0 <= radius < 1.9:
        raise DomainError(f"radius must lie in [0, 1.9), got {radius}")
    if radius == 0:
        return C0.copy()
    rng = np.random.default_rng(seed)
    g = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
    a = (g - g.conj().T) / 2
    a /= np.max(np.abs(a))

    def coin(t):
        return polar_unitary(C0 @ sla.expm(t * a))

    lo, hi = 0.0, radius
    while dist_inf(coin(hi), C0) < radius:
        lo, hi = hi, 2 * hi
        if hi > 64:
            raise NumericalError("could not bracket the requested coin radius")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        c = coin(mid)
        d = dist_inf(c, C0)
        if abs(d - radius) <= tol:
            return c
        if d < radius:
            lo = mid
        else:
            hi = mid
    raise NumericalError("bisection for the coin radius did not converge")


@dataclass(frozen=True)
class CoinField:
    """Coin matrices per site: default, optional per-sublattice, per-site overrides."""

    default: np.ndarray
    sublattice: tuple[np.ndarray, np.ndarray] | None = None
    overrides: Mapping[Site, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "default", check_coin(self.default))
        if self.sublattice is not None:
            object.__setattr__(self, "sublattice", tuple(check_coin(m) for m in self.sublattice))
        object.__setattr__(self, "overrides", {s: check_coin(m) for s, m in dict(self.overrides).items()})

    @classmethod
    def constant(cls, c) -> "CoinField":
        return cls(c)

    @classmethod
    def two_sublattice(cls, c_a, c_b) -> "CoinField":
        return cls(c_a, (c_a, c_b))

    @classmethod
    def per_site(cls, default, mapping: Mapping[Site, np.ndarray]) -> "CoinField":
        return cls(default, None, mapping)

    def at(self, site: Site) -> np.ndarray:
        if site in self.overrides:
            return self.overrides[site]
        if self.sublattice is not None:
            return self.sublattice[int(site.sub)]
        return self.default

    def stack(self, j, k, sub) -> np.ndarray:
        """Coin matrices for arrays of sites, shape (n, 3, 3)."""
        sub = np.asarray(sub)
        if self.sublattice is not None:
            out = np.stack(self.sublattice)[sub]
        else:
            out = np.broadcast_to(self.default, (sub.size, 3, 3)).copy()
        if self.overrides:
            for i, (jj, kk, ss) in enumerate(zip(np.asarray(j).tolist(), np.asarray(k).tolist(), sub.tolist())):
                m = self.overrides.get(Site(jj, kk, Sub(ss)))
                if m is not None:
                    out[i] = m
        return out

    def describe(self) -> dict:
        d = {"default": _matrix_to_list(self.default)}
        if self.sublattice is not None:
            d["A"] = _matrix_to_list(self.sublattice[0])
            d["B"] = _matrix_to_list(self.sublattice[1])
        if self.overrides:
            d["overrides"] = len(self.overrides)
        return d


def _matrix_to_list(m):
    return [[[float(z.real), float(z.imag)] for z in row] for row in np.asarray(m)]


# Counter-based phases: a SplitMix64 finalizer applied to the packed counter
# (seed, j, k, sub, slot).  Stateless, so any subset of sites can be drawn in
# any order and always gets the same values.
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)


def _mix(x: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        x = x + _GOLDEN
        x = (x ^ (x >> np.uint64(30))) * _M1
        x = (x ^ (x >> np.uint64(27))) * _M2
        return x ^ (x >> np.uint64(31))


def _as_u64(a) -> np.ndarray:
    return np.asarray(a, dtype=np.int64).view(np.uint64)


def counter_uniform(seed: int, j, k, sub, slot) -> np.ndarray:
    """Uniform [0, 1) doubles keyed by (seed, site, slot)."""
    j, k, sub, slot = np.broadcast_arrays(*(np.asarray(a, dtype=np.int64) for a in (j, k, sub, slot)))
    h = _mix(np.full(j.shape, np.uint64(seed & 0xFFFFFFFFFFFFFFFF), dtype=np.uint64))
    for part in (j, k, sub * 4 + slot):
        h = _mix(h ^ _as_u64(part))
    return (h >> np.uint64(11)).astype(np.float64) * 2.0**-53


def derive_seed(seed: int, index: int) -> int:
    """Independent 64-bit seed for sample ``index`` of a run seeded by ``seed``."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, int(index)])
    return int(ss.generate_state(1, np.uint64)[0])


MODES = ("correlated", "decorrelated")


@dataclass(frozen=True, eq=False)
class DisorderField:
    """Phases ω_x (correlated) or ω_{x,j} (decorrelated) in [0, 2π).

    ``sites`` and ``phases`` hold the materialized values for the ambient box
    of the draw; ``phase`` evaluates the same generator for arbitrary sites.
    """

    mode: str
    seed: int
    sites: tuple[np.ndarray, np.ndarray, np.ndarray]
    phases: np.ndarray

    def __post_init__(self):
        if self.mode not in MODES:
            raise DomainError(f"disorder mode must be one of {MODES}, got {self.mode!r}")

    @property
    def slots(self) -> int:
        return 1 if self.mode == "correlated" else 3

    def phase(self, j, k, sub, coin) -> np.ndarray:
        """Phase applied to target element (site, coin)."""
        slot = np.zeros_like(np.asarray(coin)) if self.mode == "correlated" else np.asarray(coin) - 1
        return 2 * np.pi * counter_uniform(self.seed, j, k, sub, slot)

    def as_dict(self) -> dict[Site, tuple[float, ...]]:
        j, k, sub = self.sites
        return {
            Site(int(a), int(b), Sub(int(c))): tuple(float(p) for p in row)
            for a, b, c, row in zip(j, k, sub, self.phases)
        }


def sample_disorder(ambient: BoxSpec, mode: str, seed: int) -> DisorderField:
    """Draw i.i.d. uniform phases for every site of the ambient interior."""
    if mode not in MODES:
        raise DomainError(f"disorder mode must be one of {MODES}, got {mode!r}")
    j, k, sub = box_index(ambient).sites()
    nslot = 1 if mode == "correlated" else 3
    slots = np.arange(nslot)
    u = counter_uniform(seed, j[:, None], k[:, None], sub[:, None], slots[None, :])
    return DisorderField(mode, int(seed), (j, k, sub), 2 * np.pi * u)


@dataclass(frozen=True, eq=False)
class WalkMatrix:
    """Sparse unitary matrix over the interior basis of an ambient box."""

    matrix: sp.csr_matrix
    index: BoxIndex
    inner: BoxSpec | None = None
    coins: CoinField | None = None
    disorder: DisorderField | None = None

    @property
    def dim(self) -> int:
        return self.index.dim

    @property
    def ambient(self) -> BoxSpec:
        return self.index.box

    @property
    def basis(self) -> tuple[BasisElement, ...]:
        return self.index.elements

    def index_of(self, b: BasisElement) -> int:
        return self.index.index_of(b)

    def unitarity_defect(self) -> float:
        m = self.matrix
        g = (m.conj().T @ m - sp.identity(self.dim, format="csr")).tocoo()
        return float(np.max(np.abs(g.data))) if g.nnz else 0.0

    def to_triplets(self) -> str:
        """Sparse triplet text: header with the basis ordering, then rows."""
        out = io.StringIO()
        box = self.ambient
        out.write(
            f"# hexwalk-walkmatrix dim={self.dim} order=j,k,sub,coin "
            f"ambient=({box.L1},{box.L2}) origin=({box.origin.j},{box.origin.k})\n"
        )
        coo = self.matrix.tocoo()
        order = np.lexsort((coo.row, coo.col))
        for r, c, v in zip(coo.row[order], coo.col[order], coo.data[order]):
            out.write(f"{r} {c} {v.real:.17g} {v.imag:.17g}\n")
        return out.getvalue()


def _assemble(ambient: BoxSpec, coins: CoinField, disorder: DisorderField | None,
              forced_boxes: tuple[BoxSpec, ...], inner: BoxSpec | None) -> WalkMatrix:
    idx = box_index(ambient)
    n = idx.dim
    forced = np.zeros(n, dtype=bool)
    for box in forced_boxes:
        forced |= forced_site_mask(box, idx.j, idx.k, idx.sub)
    # coin matrices per column, taken at the column's site
    sj, sk, ss = idx.sites()
    site_pos = np.cumsum(np.r_[1, (idx.j[1:] != idx.j[:-1]) | (idx.k[1:] != idx.k[:-1]) | (idx.sub[1:] != idx.sub[:-1])]) - 1
    mats = coins.stack(sj, sk, ss)[site_pos]
    mats[forced] = C0
    cols = np.arange(n)
    rows_all, cols_all, vals_all = [], [], []
    for d in (1, 2, 3):
        tj, tk, tsub = shift_arrays(idx.j, idx.k, idx.sub, d)
        rows = idx.lookup(tj, tk, tsub, np.full(n, d))
        vals = mats[cols, d - 1, idx.coin - 1]
        nz = vals != 0
        if np.any(rows[nz] < 0):
            raise NumericalError("walk leaves the ambient interior; forced boundary is inconsistent")
        if disorder is not None:
            vals = vals * np.exp(1j * disorder.phase(tj, tk, tsub, np.full(n, d)))
        rows_all.append(rows[nz])
        cols_all.append(cols[nz])
        vals_all.append(vals[nz])
    m = sp.csr_matrix(
        (np.concatenate(vals_all), (np.concatenate(rows_all), np.concatenate(cols_all))),
        shape=(n, n),
    )
    m.sort_indices()
    return WalkMatrix(m, idx, inner, coins, disorder)


def assemble_walk(ambient: BoxSpec, coins: CoinField, disorder: DisorderField | None = None) -> WalkMatrix:
    """D_ω S 𝒞 restricted to the interior of ``ambient`` (boundary ring forced to C0)."""
    return _assemble(ambient, coins, disorder, (ambient,), None)


def _inner_fits(ambient: BoxSpec, inner: BoxSpec, margin: int = 2) -> bool:
    """Every block within ``margin`` of the inner box lies in the ambient interior."""
    o = inner.origin
    bj, bk = np.meshgrid(
        np.arange(-inner.L1 - margin, inner.L1 + margin) + o.j,
        np.arange(-inner.L2 - margin, inner.L2 + margin) + o.k,
        indexing="ij",
    )
    return bool(np.all(interior_block_mask(ambient, bj, bk)))


def restrict_box(ambient: BoxSpec, coins: CoinField, disorder: DisorderField | None, inner: BoxSpec) -> WalkMatrix:
    """U^{(L)}: like assemble_walk with coins also forced on Γ_{C0} of ``inner``."""
    if inner == ambient:
        return _assemble(ambient, coins, disorder, (ambient,), inner)
    if not _inner_fits(ambient, inner):
        raise SizeError(f"inner box {inner} does not fit in {ambient} with a 2-site margin")
    return _assemble(ambient, coins, disorder, (ambient, inner), inner)


def inner_mask(w: WalkMatrix, inner: BoxSpec) -> np.ndarray:
    """Boolean mask of basis indices that lie in H_L of ``inner``."""
    bj, bk = block_arrays(w.index.j, w.index.k, w.index.sub, w.index.coin)
    return interior_block_mask(inner, bj, bk)


def operator_norm(m, tol: float = 1e-10, maxiter: int = 10_000, dense_below: int = 2000) -> float:
    """Spectral norm: dense SVD for small matrices, else power iteration on M†M."""
    m = sp.csr_matrix(m)
    if m.nnz == 0:
        return 0.0
    # drop empty rows and columns; the norm only depends on the support
    rows = np.unique(m.tocoo().row)
    cols = np.unique(m.tocoo().col)
    sub = m[rows][:, cols]
    if max(sub.shape) < dense_below:
        return float(np.linalg.norm(sub.toarray(), 2))
    rng = np.random.default_rng(0)
    v = rng.standard_normal(sub.shape[1]) + 1j * rng.standard_normal(sub.shape[1])
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(maxiter):
        w = sub.conj().T @ (sub @ v)
        new = float(np.linalg.norm(w))
        if new == 0:
            return 0.0
        v = w / new
        if abs(new - lam) <= tol * new:
            return float(np.sqrt(new))
        lam = new
    raise NumericalError(f"power iteration did not converge in {maxiter} steps")


def transition_operator(u: WalkMatrix, u_l: WalkMatrix) -> tuple[sp.csr_matrix, float]:
    """T = U − U^{(L)} and its spectral norm."""
    if u.index is not u_l.index and not (
        u.ambient == u_l.ambient and u.dim == u_l.dim
    ):
        raise ContractError("walk matrices are defined on different bases")
    t = (u.matrix - u_l.matrix).tocsr()
    t.eliminate_zeros()
    return t, operator_norm(t)


def schur_bound(m) -> float:
    """√(max row abs sum · max column abs sum), an upper bound on ‖m‖."""
    a = abs(sp.csr_matrix(m))
    if a.nnz == 0:
        return 0.0
    xi = float(a.sum(axis=1).max())
    eta = float(a.sum(axis=0).max())
    return float(np.sqrt(xi * eta))
