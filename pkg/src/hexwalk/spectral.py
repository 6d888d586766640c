"""Bloch bands, the reduced symbol V(k), and the fully localized C0 blocks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .lattice import BoxSpec, Sub, box_index, interior_block_mask
from .operators import C0, check_coin, counter_uniform, derive_seed

DISCRIMINANT_TOL = 1e-9


def _s_ba(k):
    k1, k2 = k
    return np.diag([np.exp(1j * (k1 - k2)), 1.0, np.exp(-1j * k2)])


def _s_ab(k):
    k1, k2 = k
    return np.diag([np.exp(1j * k2), np.exp(1j * (k2 - k1)), 1.0])


def bloch_matrix(k, c_a, c_b) -> np.ndarray:
    """Û(k) in the basis f1⊗e1..f1⊗e3, f2⊗e1..f2⊗e3."""
    c_a, c_b = check_coin(c_a), check_coin(c_b)
    out = np.zeros((6, 6), dtype=complex)
    out[:3, 3:] = _s_ba(k) @ c_b
    out[3:, :3] = _s_ab(k) @ c_a
    return out


def normalization_phase(c_a, c_b) -> complex:
    """Principal cube root of conj(det C_B det C_A), making det V = 1."""
    d = np.linalg.det(c_b) * np.linalg.det(c_a)
    return complex(np.exp(-1j * np.angle(d) / 3))


def reduced_symbol(k, c_a, c_b, normalize: bool = False) -> np.ndarray:
    """V(k) = S_BA(k) C_B S_AB(k) C_A, optionally scaled to det 1."""
    c_a, c_b = check_coin(c_a), check_coin(c_b)
    v = _s_ba(k) @ c_b @ _s_ab(k) @ c_a
    if normalize:
        v = v * normalization_phase(c_a, c_b)
    return v


def charpoly(v: np.ndarray) -> np.ndarray:
    """Coefficients [1, a2, a1, a0] of det(λ − v)."""
    return np.poly(v)


def bands(k, c_a, c_b) -> np.ndarray:
    """Six eigenphases of Û(k) in [0, 2π), ascending."""
    ev = np.linalg.eigvals(bloch_matrix(k, c_a, c_b))
    return np.sort(np.mod(np.angle(ev), 2 * np.pi))


def bands_from_reduced(k, c_a, c_b) -> np.ndarray:
    """Eigenphases from ±√ of the eigenvalues of (unnormalized) V(k)."""
    lam = np.linalg.eigvals(reduced_symbol(k, c_a, c_b))
    root = np.sqrt(lam.astype(complex))
    return np.sort(np.mod(np.angle(np.concatenate([root, -root])), 2 * np.pi))


def discriminant(t: complex) -> complex:
    """Discriminant of λ³ − tλ² + conj(t)λ − 1."""
    b, c, d = -t, np.conj(t), -1.0
    return 18 * b * c * d - 4 * b**3 * d + b**2 * c**2 - 4 * c**3 - 27 * d**2


def band_touch_test(t: complex, tol: float = DISCRIMINANT_TOL) -> bool:
    """True iff the normalized characteristic cubic has a repeated root."""
    return bool(abs(discriminant(complex(t))) <= tol)


def k_grid(n1: int = 64, n2: int | None = None) -> np.ndarray:
    n2 = n1 if n2 is None else n2
    g1 = 2 * np.pi * np.arange(n1) / n1
    g2 = 2 * np.pi * np.arange(n2) / n2
    k1, k2 = np.meshgrid(g1, g2, indexing="ij")
    return np.stack([k1.ravel(), k2.ravel()], axis=1)


def trace_scan(c_a, c_b, grid: np.ndarray) -> np.ndarray:
    """tr V(k) (normalized) over a k-grid."""
    c_a, c_b = check_coin(c_a), check_coin(c_b)
    ph = normalization_phase(c_a, c_b)
    k1, k2 = grid[:, 0], grid[:, 1]
    s_ba = np.stack([np.exp(1j * (k1 - k2)), np.ones_like(k1), np.exp(-1j * k2)], axis=1)
    s_ab = np.stack([np.exp(1j * k2), np.exp(1j * (k2 - k1)), np.ones_like(k1)], axis=1)
    # tr(D1 B D2 A) = Σ_{a,b} D1_a B_ab D2_b A_ba
    return ph * np.einsum("na,ab,nb,ba->n", s_ba, c_b, s_ab, c_a)


def is_flat(c_a, c_b, n: int = 64, tol: float = 1e-10) -> bool:
    """Flat bands iff tr V(k) is constant on the grid."""
    t = trace_scan(c_a, c_b, k_grid(n))
    return bool(np.max(np.abs(t - t[0])) <= tol)


def band_scan(c_a, c_b, grid: np.ndarray) -> list[tuple]:
    """Rows (k1, k2, six phases, tr re, tr im, touch) for a band CSV."""
    ph = normalization_phase(c_a, c_b)
    rows = []
    for k in grid:
        v = reduced_symbol(k, c_a, c_b) * ph
        t = complex(np.trace(v))
        rows.append((float(k[0]), float(k[1]), *bands(k, c_a, c_b), t.real, t.imag, band_touch_test(t)))
    return rows


@dataclass(frozen=True)
class LocalizedBlock:
    omegas: tuple[float, float, float, float]
    matrix: np.ndarray
    theta: complex


def localized_block(w0: float, w1: float, w2: float, w3: float) -> LocalizedBlock:
    """Restriction of U_ω(C0) to H^{j,k} in its generator order.

    ω0 sits on A(j,k), ω1 on B(j,k−1), ω2 on B(j+1,k−1), ω3 on B(j,k); the
    phase of each transition is that of its target site.
    """
    m = np.zeros((6, 6), dtype=complex)
    # generator order: A e1, A e2, A e3, B(j,k) e3, B(j,k-1) e1, B(j+1,k-1) e2
    m[3, 0] = np.exp(1j * w3)   # A e1 -> B(j,k) e3
    m[1, 3] = np.exp(1j * w0)   # B(j,k) e3 -> A e2
    m[4, 1] = np.exp(1j * w1)   # A e2 -> B(j,k-1) e1
    m[2, 4] = np.exp(1j * w0)   # B(j,k-1) e1 -> A e3
    m[5, 2] = np.exp(1j * w2)   # A e3 -> B(j+1,k-1) e2
    m[0, 5] = np.exp(1j * w0)   # B(j+1,k-1) e2 -> A e1
    theta = np.exp(1j * (3 * w0 + w1 + w2 + w3))
    return LocalizedBlock((w0, w1, w2, w3), m, complex(theta))


def arc_fraction(z: complex, eta: float) -> float:
    """Normalized arc length of {|w| = 1, |w − z| ≤ η} (law of cosines)."""
    r = abs(z)
    if r == 0:
        return 1.0 if eta >= 1 else 0.0
    c = (1 + r * r - eta * eta) / (2 * r)
    if c >= 1:
        return 0.0
    if c <= -1:
        return 1.0
    return float(np.arccos(c) / np.pi)


def gap_probability_exact(z: complex, eta: float, box: BoxSpec) -> float:
    """P(dist(z, σ(U^{(L)}(C0))) ≤ η) = 1 − (1 − 6ℓ)^{vol}."""
    if not 0 < eta < 1:
        raise DomainError(f"eta must lie in (0, 1), got {eta}")
    if abs(abs(z) - 1) == 0:
        raise DomainError("z must lie off the unit circle")
    ell = arc_fraction(z, eta)
    if ell >= 1 / 6:
        raise DomainError(f"arc fraction {ell:.4f} >= 1/6; outside the independence regime")
    return float(1 - (1 - 6 * ell) ** box.volume)


def block_thetas(box: BoxSpec, seed: int) -> np.ndarray:
    """Θ for every block of ``box`` under a correlated draw keyed by ``seed``."""
    idx = box_index(box)
    a = idx.sub == int(Sub.A)
    bj, bk = idx.j[a & (idx.coin == 1)], idx.k[a & (idx.coin == 1)]
    assert np.all(interior_block_mask(box, bj, bk))

    def w(j, k, sub):
        return 2 * np.pi * counter_uniform(seed, j, k, sub, 0)

    return np.exp(1j * (3 * w(bj, bk, 0) + w(bj, bk - 1, 1) + w(bj + 1, bk - 1, 1) + w(bj, bk, 1)))


def gap_probability_mc(z: complex, eta: float, box: BoxSpec, samples: int, seed: int,
                       coins=None) -> tuple[float, float]:
    """Monte Carlo frequency of dist(z, σ) ≤ η for C0 with correlated phases.

    The spectrum of each block is the set of sixth roots of its Θ, so no
    large eigensolve is needed.
    """
    if coins is not None and np.max(np.abs(np.asarray(coins) - C0)) != 0:
        raise DomainError("the blockwise Monte Carlo only applies to the coin C0")
    if samples < 100:
        raise DomainError("at least 100 samples are required")
    roots = np.exp(2j * np.pi * np.arange(6) / 6)
    hits = 0
    for m in range(samples):
        theta = block_thetas(box, derive_seed(seed, m))
        base = np.exp(1j * np.angle(theta) / 6)
        spec = (base[:, None] * roots[None, :]).ravel()
        hits += bool(np.min(np.abs(spec - z)) <= eta)
    p = hits / samples
    return p, float(np.sqrt(p * (1 - p) / samples))
