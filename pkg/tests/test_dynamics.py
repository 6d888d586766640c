import numpy as np
import pytest

from hexwalk.errors import NumericalError
from hexwalk.lattice import ORIGIN, BasisElement, BlockId, BoxSpec, Site, Sub, block_elements, block_of
from hexwalk.operators import C0, IDENTITY, CoinField, assemble_walk, coin_near_c0, sample_disorder
from hexwalk.dynamics import dynloc_profile, evolve, guard_mask, record_run, spread_moments, sup_transition
from hexwalk.spectral import localized_block


def c0_walk(box=BoxSpec(5, 5), seed=0):
    dis = sample_disorder(box, "correlated", seed)
    return assemble_walk(box, CoinField(C0), dis), dis


def test_evolve_zero_steps_is_identity():
    w, _ = c0_walk()
    b = BasisElement(ORIGIN, 2)
    psi = evolve(w, b, 0)
    assert psi[w.index_of(b)] == 1 and np.count_nonzero(psi) == 1


def test_evolve_matches_dense_power():
    box = BoxSpec(3, 3)
    w = assemble_walk(box, CoinField(coin_near_c0(0.2, 1)), sample_disorder(box, "decorrelated", 1))
    rng = np.random.default_rng(0)
    psi0 = rng.standard_normal(w.dim) + 1j * rng.standard_normal(w.dim)
    psi0 /= np.linalg.norm(psi0)
    dense = np.linalg.matrix_power(w.matrix.toarray(), 7)
    assert np.abs(evolve(w, psi0, 7) - dense @ psi0).max() <= 1e-12
    with pytest.raises(ValueError):
        evolve(w, psi0, -1)


def test_c0_evolution_stays_in_block_and_has_period_six():
    w, dis = c0_walk(seed=4)
    phases = dis.as_dict()
    for blk in (BlockId(0, 0), BlockId(1, -1)):
        j, k = blk
        theta = localized_block(phases[Site(j, k, Sub.A)][0], phases[Site(j, k - 1, Sub.B)][0],
                                phases[Site(j + 1, k - 1, Sub.B)][0], phases[Site(j, k, Sub.B)][0]).theta
        gens = [w.index_of(b) for b in block_elements(blk)]
        outside = np.ones(w.dim, bool)
        outside[gens] = False
        rng = np.random.default_rng(1)
        psi0 = np.zeros(w.dim, complex)
        psi0[gens] = rng.standard_normal(6) + 1j * rng.standard_normal(6)
        psi = psi0.copy()
        for n in range(1, 61):
            psi = w.matrix @ psi
            assert np.all(psi[outside] == 0)
            if n % 6 == 0:
                assert np.abs(psi - theta ** (n // 6) * psi0).max() <= 1e-12


def test_sup_transition_examples():
    w, _ = c0_walk()
    x = BasisElement(ORIGIN, 1)
    assert sup_transition(w, x, x, 5) == 1.0
    far = BasisElement(Site(2, -1, Sub.A), 1)
    assert block_of(far) != block_of(x)
    assert sup_transition(w, far, x, 50) == 0.0
    with pytest.raises(ValueError):
        sup_transition(w, x, x, 0)


def test_record_run_covers_both_directions():
    box = BoxSpec(3, 3)
    w = assemble_walk(box, CoinField(coin_near_c0(0.3, 2)), sample_disorder(box, "decorrelated", 2))
    x, y = BasisElement(Site(0, -1, Sub.B), 2), BasisElement(ORIGIN, 1)
    run = record_run(w, y, [x], 4, guard=False)
    m = w.matrix.toarray()
    ix, iy = w.index_of(x), w.index_of(y)
    want = [np.linalg.matrix_power(m.conj().T, -n)[ix, iy] if n < 0 else np.linalg.matrix_power(m, n)[ix, iy]
            for n in range(-4, 5)]
    assert np.abs(run.records[x] - want).max() <= 1e-13


def test_guard_trips_when_the_wave_reaches_the_boundary():
    box = BoxSpec(4, 4)
    w = assemble_walk(box, CoinField(IDENTITY))
    assert guard_mask(w).any() and not guard_mask(w)[w.index_of(BasisElement(ORIGIN, 1))]
    with pytest.raises(NumericalError):
        record_run(w, BasisElement(ORIGIN, 1), [BasisElement(ORIGIN, 1)], 40)


def test_dynloc_c0_is_exactly_zero():
    prof = dynloc_profile(C0, 8, 60, 3, seed=0, ambient=BoxSpec(10, 10), min_distance=2)
    assert prof.exact_localization and np.all(prof.means == 0)


def test_dynloc_decays_near_c0():
    prof = dynloc_profile(coin_near_c0(0.05, 7), 8, 20, 6, seed=1, ambient=BoxSpec(12, 12), min_distance=2)
    assert prof.g > 0 and prof.r2 > 0.9
    assert np.all(prof.means <= 1)
    assert 0 <= prof.meta["sup_doubling_change"] < 1


def test_dynloc_is_deterministic():
    kw = dict(ambient=BoxSpec(10, 10), min_distance=2)
    a = dynloc_profile(coin_near_c0(0.05, 3), 6, 15, 3, seed=2, **kw)
    b = dynloc_profile(coin_near_c0(0.05, 3), 6, 15, 3, seed=2, threads=2, **kw)
    assert np.array_equal(a.means, b.means)


def test_spread_moments():
    w, _ = c0_walk()
    start = BasisElement(ORIGIN, 1)
    rows = spread_moments(w, start, 30)
    assert rows[0] == (0, 0.0, 0.0)
    # a localized block has diameter at most 2 around its A site
    assert max(r[2] for r in rows) <= 4 + 1e-12
    free = spread_moments(assemble_walk(BoxSpec(12, 12), CoinField(IDENTITY)), start, 12)
    assert free[12][1] >= 2 * free[6][1] - 1e-12
    with pytest.raises(ValueError):
        spread_moments(w, np.zeros(w.dim), 3)
