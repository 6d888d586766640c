"""Identity and invariant checks shared by the ``check`` command and the tests."""

from __future__ import annotations

from typing import NamedTuple

import numpy as np
from scipy.stats import unitary_group

from .greens import resolvent_identity_check
from .lattice import BoxSpec, block_arrays
from .operators import (
    C0,
    IDENTITY,
    CoinField,
    assemble_walk,
    coin_near_c0,
    derive_seed,
    dist_inf,
    restrict_box,
    sample_disorder,
    schur_bound,
    transition_operator,
)
from .spectral import is_flat, k_grid, localized_block, normalization_phase


class CheckResult(NamedTuple):
    name: str
    value: float
    tolerance: float
    passed: bool


def _haar(seed: int) -> np.ndarray:
    return unitary_group.rvs(3, random_state=np.random.default_rng(seed))


def random_walks(count: int, seed: int, boxes=((3, 3), (5, 4), (8, 8), (15, 15))):
    """Assembled walks over a mix of boxes, coins and disorder modes."""
    rng = np.random.default_rng(seed)
    for i in range(count):
        box = BoxSpec(*boxes[i % len(boxes)])
        kind = i % 3
        if kind == 0:
            coins = CoinField(_haar(derive_seed(seed, i)))
        elif kind == 1:
            coins = CoinField.two_sublattice(_haar(derive_seed(seed, 2 * i)), _haar(derive_seed(seed, 2 * i + 1)))
        else:
            coins = CoinField(coin_near_c0(float(rng.uniform(0.01, 0.2)), derive_seed(seed, i)))
        mode = ("correlated", "decorrelated")[i % 2]
        yield assemble_walk(box, coins, sample_disorder(box, mode, derive_seed(seed, 100 + i)))


def max_unitarity_defect(count: int = 20, seed: int = 0) -> float:
    return max(w.unitarity_defect() for w in random_walks(count, seed))


def c0_cross_block_leak(box: BoxSpec = BoxSpec(6, 6), n_steps: int = 100, starts: int = 10, seed: int = 0) -> float:
    """Largest amplitude outside the starting block over n ≤ n_steps under C0."""
    w = assemble_walk(box, CoinField(C0), sample_disorder(box, "decorrelated", seed))
    idx = w.index
    bj, bk = block_arrays(idx.j, idx.k, idx.sub, idx.coin)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for y in rng.choice(w.dim, size=starts, replace=False):
        outside = (bj != bj[y]) | (bk != bk[y])
        psi = np.zeros(w.dim, dtype=complex)
        psi[y] = 1.0
        for _ in range(n_steps):
            psi = w.matrix @ psi
            worst = max(worst, float(np.max(np.abs(psi[outside]))))
    return worst


def block_sixth_power_error(draws: int = 100, seed: int = 0) -> float:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(draws):
        blk = localized_block(*rng.uniform(0, 2 * np.pi, 4))
        m6 = np.linalg.matrix_power(blk.matrix, 6)
        worst = max(worst, float(np.max(np.abs(m6 - blk.theta * np.eye(6)))))
    return worst


def transition_bound_rows(coins_per_radius: int = 20, radii=(0.01, 0.05, 0.1),
                          boxes=((3, 3), (5, 5)), seed: int = 0) -> list[dict]:
    """‖T‖ against 3‖C − C0‖_∞ and the Schur bound for inner boxes in a larger ambient."""
    rows = []
    for r_i, r in enumerate(radii):
        for c_i in range(coins_per_radius):
            coin = coin_near_c0(r, derive_seed(seed, 1000 * r_i + c_i))
            coins = CoinField(coin)
            for L in boxes:
                inner = BoxSpec(*L)
                ambient = BoxSpec(L[0] + 3, L[1] + 3)
                disorder = sample_disorder(ambient, "decorrelated", derive_seed(seed, 7 * c_i + r_i))
                t, norm = transition_operator(assemble_walk(ambient, coins, disorder),
                                              restrict_box(ambient, coins, disorder, inner))
                rows.append({"radius": r, "L": L, "norm": norm, "bound": 3 * dist_inf(coin, C0),
                             "schur": schur_bound(t)})
    return rows


def _symbol_stacks(grid: np.ndarray, c_a: np.ndarray, c_b: np.ndarray):
    """Û(k) and normalized V(k) for every k of the grid, as (n, 6, 6) and (n, 3, 3) stacks."""
    k1, k2 = grid[:, 0], grid[:, 1]
    one = np.ones_like(k1)
    s_ba = np.stack([np.exp(1j * (k1 - k2)), one, np.exp(-1j * k2)], axis=1)
    s_ab = np.stack([np.exp(1j * k2), np.exp(1j * (k2 - k1)), one], axis=1)
    top = s_ba[:, :, None] * c_b[None]           # S_BA(k) C_B
    bottom = s_ab[:, :, None] * c_a[None]        # S_AB(k) C_A
    u = np.zeros((len(grid), 6, 6), dtype=complex)
    u[:, :3, 3:] = top
    u[:, 3:, :3] = bottom
    v = (top @ bottom) * normalization_phase(c_a, c_b)
    return u, v


def band_identity_errors(pairs: int = 20, n: int = 64, seed: int = 0) -> dict[str, float]:
    """det V(k) constancy, char-poly conjugacy and σ(Û) = ±√σ(V) over an n×n grid."""
    grid = k_grid(n)
    det_err = conj_err = root_err = 0.0
    for p in range(pairs):
        c_a, c_b = _haar(derive_seed(seed, 2 * p)), _haar(derive_seed(seed, 2 * p + 1))
        u, v = _symbol_stacks(grid, c_a, c_b)
        dets = np.linalg.det(v)
        det_err = max(det_err, float(np.max(np.abs(dets - dets[0]))))
        # det(λ − V) = λ³ + a2 λ² + a1 λ + a0 from traces
        tr = np.trace(v, axis1=1, axis2=2)
        tr2 = np.trace(v @ v, axis1=1, axis2=2)
        a2, a1, a0 = -tr, (tr**2 - tr2) / 2, -dets
        conj_err = max(conj_err, float(np.max(np.abs(a2 + np.conj(a1)))), float(np.max(np.abs(a0 + 1))))
        ev6 = np.linalg.eigvals(u)
        root = np.sqrt(np.linalg.eigvals(v) / normalization_phase(c_a, c_b))
        ev3 = np.concatenate([root, -root], axis=1)
        d = np.abs(ev6[:, :, None] - ev3[:, None, :])
        root_err = max(root_err, float(d.min(axis=2).max()), float(d.min(axis=1).max()))
    return {"det": det_err, "charpoly": conj_err, "roots": root_err}


def resolvent_residual(trials: int = 5, seed: int = 0) -> float:
    """Resolvent identity for (U, U^{(L)}) on a box of dimension ≤ 600."""
    ambient, inner = BoxSpec(5, 5), BoxSpec(2, 2)
    coins = CoinField(coin_near_c0(0.1, seed))
    disorder = sample_disorder(ambient, "decorrelated", seed)
    u = assemble_walk(ambient, coins, disorder)
    u_l = restrict_box(ambient, coins, disorder, inner)
    return max(resolvent_identity_check(u, u_l, z, trials, seed) for z in (0.9, 1.1j, -0.5 + 0.2j))


def phi_formula_error(pairs: int = 100, seed: int = 0) -> float:
    from .topo import classify_path, example_path, phi_norm, step_coefficient

    steps = [st for st in classify_path(example_path(6, 6)) if st.cls in ("hh", "pp")]
    steps += [st for st in single_step_variants() if st.cls in ("hh", "pp")]
    rng = np.random.default_rng(seed)
    worst = 0.0
    for p in range(pairs):
        c = _haar(derive_seed(seed, p))
        st = steps[int(rng.integers(len(steps)))]
        i, j = step_coefficient(st)
        worst = max(worst, abs(phi_norm(st.site, st, c) - np.sqrt(1 - abs(c[i - 1, j - 1]) ** 2)))
    return worst


def single_step_variants():
    """One step per ordered (entry side, exit side) pair at A(0,0) and B(0,0)."""
    from .lattice import Site, Sub
    from .topo import (ScatteringPath, classify_path, edge_neighbor, face_neighbors, hex_id, hexagon,
                       parallelogram, trapezoid, triangle)

    def station(x, side):
        a = side // 2
        return hexagon(*hex_id(x, a)) if side % 2 else parallelogram(x, edge_neighbor(x, a))

    out = []
    for x in (Site(0, 0, Sub.A), Site(0, 0, Sub.B)):
        for es in range(6):
            for xs in range(6):
                if es == xs:
                    continue
                ta, tb = trapezoid(x, es // 2), trapezoid(x, xs // 2)
                inner = [ta] if ta == tb else [ta, tb] if tb in face_neighbors(ta) else [ta, triangle(x), tb]
                out.append(classify_path(ScatteringPath((station(x, es), *inner, station(x, xs))))[0])
    return out


def identity_suite(seed: int = 0, samples: int = 20) -> list[CheckResult]:
    res = []

    def add(name, value, tol):
        res.append(CheckResult(name, float(value), tol, bool(value <= tol)))

    add("unitarity", max_unitarity_defect(samples, seed), 1e-12)
    add("c0_cross_block", c0_cross_block_leak(seed=seed), 1e-14)
    add("c0_block_sixth_power", block_sixth_power_error(100, seed), 1e-10)
    rows = transition_bound_rows(max(1, samples // 4), seed=seed)
    add("transition_norm_bound", max(r["norm"] - r["bound"] for r in rows), 0.0)
    add("transition_schur_bound", max(r["norm"] - r["schur"] for r in rows), 1e-12)
    band = band_identity_errors(max(1, samples // 4), 16, seed)
    add("band_det", band["det"], 1e-10)
    add("band_charpoly", band["charpoly"], 1e-10)
    add("band_roots", band["roots"], 1e-9)
    add("flat_c0", 0.0 if is_flat(C0, C0) else 1.0, 0.0)
    add("not_flat_identity", 1.0 if is_flat(IDENTITY, IDENTITY) else 0.0, 0.0)
    add("resolvent_identity", resolvent_residual(3, seed), 1e-9)
    add("phi_formula", phi_formula_error(100, seed), 1e-12)
    return res
