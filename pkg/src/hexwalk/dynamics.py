"""Time evolution, dynamical-localization probes and spreading diagnostics."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError
from .greens import DEFAULT_RAY, DecayProfile, _profile, check_margin, ray_targets
from .lattice import ORIGIN, BasisElement, BoxSpec, Site, boundary_coin_sites, distance_array, neighbors
from .operators import C0, CoinField, WalkMatrix, assemble_walk, derive_seed, dist_inf, sample_disorder

NORM_TOL = 1e-10
GUARD_AMPLITUDE = 1e-12
GUARD_SITES = 2


def _state(w: WalkMatrix, psi0) -> np.ndarray:
    if isinstance(psi0, BasisElement):
        v = np.zeros(w.dim, dtype=complex)
        v[w.index_of(psi0)] = 1.0
        return v
    return np.array(psi0, dtype=complex)


def evolve(w: WalkMatrix, psi0, n: int) -> np.ndarray:
    """W^n ψ0 by repeated sparse products."""
    if n < 0:
        raise ValueError("n must be non-negative")
    psi = _state(w, psi0)
    norm0 = np.linalg.norm(psi)
    m = w.matrix
    for _ in range(n):
        psi = m @ psi
    if abs(np.linalg.norm(psi) - norm0) > NORM_TOL * max(n, 1):
        raise NumericalError("norm drift during evolution")
    return psi


@dataclass
class EvolutionRun:
    walk: WalkMatrix
    initial: BasisElement
    horizon: int
    records: dict[BasisElement, np.ndarray] = field(default_factory=dict)


def guard_mask(w: WalkMatrix, sites: int = GUARD_SITES) -> np.ndarray:
    """Basis elements within ``sites`` hops of the forced boundary ring."""
    ring = set(boundary_coin_sites(w.ambient))
    frontier = set(ring)
    for _ in range(sites):
        frontier = {t for s in frontier for t in neighbors(s)} - ring
        ring |= frontier
    idx = w.index
    keys = set(zip(idx.j.tolist(), idx.k.tolist(), idx.sub.tolist()))
    near = {(s.j, s.k, int(s.sub)) for s in ring} & keys
    return np.array([(a, b, c) in near for a, b, c in zip(idx.j.tolist(), idx.k.tolist(), idx.sub.tolist())])


def record_run(w: WalkMatrix, initial: BasisElement, targets, horizon: int,
               guard: bool = True, both_directions: bool = True) -> EvolutionRun:
    """Amplitudes ⟨x|W^n|y⟩ for 0 ≤ n ≤ horizon (and W†^n when requested)."""
    rows = [w.index_of(x) for x in targets]
    mask = guard_mask(w) if guard else None
    recs = np.zeros((len(rows), horizon + 1), dtype=complex)
    back = np.zeros_like(recs)
    for direction, out in ((w.matrix, recs), (w.matrix.conj().T.tocsr(), back)):
        psi = _state(w, initial)
        out[:, 0] = psi[rows]
        for n in range(1, horizon + 1):
            psi = direction @ psi
            out[:, n] = psi[rows]
            if mask is not None and np.max(np.abs(psi[mask]), initial=0.0) >= GUARD_AMPLITUDE:
                raise NumericalError(f"amplitude reached the ambient boundary at step {n}")
        if abs(np.linalg.norm(psi) - 1) > NORM_TOL * horizon:
            raise NumericalError("norm drift during evolution")
        if not both_directions:
            back = None
            break
    run = EvolutionRun(w, initial, horizon)
    for i, x in enumerate(targets):
        run.records[x] = recs[i] if back is None else np.concatenate([back[i, ::-1], recs[i, 1:]])
    return run


def sup_transition(w: WalkMatrix, x: BasisElement, y: BasisElement, n_max: int, guard: bool = False) -> float:
    """max_{|n| ≤ n_max} |⟨x|W^n|y⟩|."""
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    run = record_run(w, y, [x], n_max, guard=guard)
    return float(np.max(np.abs(run.records[x])))


def dynloc_profile(coin, max_distance: int, n_max: int, samples: int, seed: int,
                   mode: str = "decorrelated", ray: tuple[int, int] = DEFAULT_RAY,
                   ambient: BoxSpec | None = None, min_distance: int = 1, source_coin: int = 1,
                   guard: bool = True, threads: int = 1) -> DecayProfile:
    """E sup_n |⟨x|U^n|y⟩| versus distance along a ray, with a log-linear fit.

    As for the Green-function profile, the value at distance d averages the
    three coin states of the ray site.
    """
    coins = coin if isinstance(coin, CoinField) else CoinField(coin)
    ambient = ambient or BoxSpec(20, 20)
    distances, sites = ray_targets(ORIGIN, ray, max_distance, min_distance)
    check_margin(ambient, sites, 5)
    source = BasisElement(ORIGIN, source_coin)
    targets = [BasisElement(x, c) for x in sites for c in (1, 2, 3)]

    half = n_max // 2
    half_sups: dict[int, np.ndarray] = {}

    def one(m):
        disorder = sample_disorder(ambient, mode, derive_seed(seed, m))
        w = assemble_walk(ambient, coins, disorder)
        run = record_run(w, source, targets, n_max, guard=guard)
        amp = np.abs(np.array([run.records[x] for x in targets]))
        # records run over n = -n_max..n_max; the middle slice is |n| <= n_max / 2
        half_sups[m] = amp[:, n_max - half:n_max + half + 1].max(axis=1).reshape(len(sites), 3).mean(axis=1)
        return amp.max(axis=1).reshape(len(sites), 3).mean(axis=1)

    meta = {"n_max": n_max, "mode": mode, "coin_radius": dist_inf(coins.default, C0),
            "ambient": (ambient.L1, ambient.L2)}
    prof = _profile(one, distances, samples, seed, threads, meta)
    # diagnostic only: relative change of the mean sup between horizons n_max/2 and n_max
    half_mean = np.mean([half_sups[m] for m in sorted(half_sups)], axis=0)
    use = prof.means > 0
    prof.meta["sup_doubling_change"] = (float(np.max(1 - half_mean[use] / prof.means[use])) if use.any() else 0.0)
    return prof


def spread_moments(w: WalkMatrix, psi0, n_max: int, center: Site | None = None) -> list[tuple[int, float, float]]:
    """(n, Σ p d, Σ p d²) with p = |ψ_n|² and d the graph distance to the start site."""
    if center is None:
        if not isinstance(psi0, BasisElement):
            raise ValueError("center is required for vector initial states")
        center = psi0.site
    idx = w.index
    d = distance_array(center, idx.j, idx.k, idx.sub).astype(float)
    psi = _state(w, psi0)
    out = []
    for n in range(n_max + 1):
        p = np.abs(psi) ** 2
        out.append((n, float(p @ d), float(p @ d**2)))
        psi = w.matrix @ psi
    return out
