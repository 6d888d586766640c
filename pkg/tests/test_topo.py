import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import unitary_group

from hexwalk.checks import phi_formula_error, single_step_variants
from hexwalk.errors import DomainError, InputError, PathError
from hexwalk.lattice import BoxSpec, Site, Sub, shift_target
from hexwalk.operators import C0, IDENTITY, SWAP12, CoinField, assemble_walk
from hexwalk.topo import (
    HH_TABLE,
    KINDS,
    PP_TABLE,
    PP_TABLE_C21,
    ScatteringPath,
    build_scattering_region,
    classify_path,
    compute_index,
    derived_coefficient,
    edge_neighbor,
    example_path,
    face_at,
    face_center,
    face_neighbors,
    geometric_partition,
    hexagon,
    normalize_path,
    parallelogram,
    phi_block,
    phi_norm,
    remove_loops,
    site_xy,
    step_coefficient,
    trapezoid,
    triangle,
)

sites = st.builds(Site, st.integers(-6, 6), st.integers(-6, 6), st.sampled_from(list(Sub)))


def haar(seed):
    return unitary_group.rvs(3, random_state=np.random.default_rng(seed))


def faces_around(s):
    out = [triangle(s), hexagon(s.j, s.k)]
    for a in range(3):
        out += [trapezoid(s, a), parallelogram(s, edge_neighbor(s, a))]
    return out


@given(sites)
def test_face_adjacency_is_symmetric(s):
    for f in faces_around(s):
        nbrs = face_neighbors(f)
        assert f not in nbrs
        for g in nbrs:
            assert f in face_neighbors(g)


@given(sites)
def test_face_center_roundtrip(s):
    assert face_center(triangle(s)) == tuple(2 * v for v in site_xy(s))
    for f in faces_around(s):
        assert face_at(f.kind, *face_center(f)) == f
    assert set(KINDS) == {f.kind for f in faces_around(s)}


def test_face_at_rejects_unknown():
    with pytest.raises((InputError, PathError)):
        face_at("pentagon", 0, 0)
    with pytest.raises((InputError, PathError)):
        face_at("triangle", 1, 1)


def test_region_edges_and_links():
    reg = build_scattering_region(3)
    for s in reg.sites:
        assert len(reg.incoming[s]) == 3 and len(reg.outgoing[s]) == 3
    assert len(reg.links) == 9 * len(reg.sites)
    with pytest.raises(DomainError):
        build_scattering_region(1)


def test_edge_operator_is_the_walk():
    box = BoxSpec(4, 4)
    coins = CoinField.two_sublattice(haar(1), haar(2))
    w = assemble_walk(box, coins)
    assert w.dim <= 400
    reg = build_scattering_region(2)
    u = reg.operator(coins)
    m = w.matrix.tocsc()
    for s in reg.sites:
        for j, e in reg.incoming[s].items():
            b = reg.basis_element(e)
            assert b.site == s and b.coin == j
            col = m[:, w.index_of(b)].toarray().ravel()
            img = np.zeros(w.dim, dtype=complex)
            for r, v in zip(*u[:, e].nonzero()[:1], u[:, e].data):
                img[w.index_of(reg.basis_element(r))] += v
            assert np.abs(col - img).max() <= 1e-15


def test_example_path_classification():
    steps = classify_path(example_path(3, 3))
    assert [s.cls for s in steps] == ["hh"] * 3 + ["hp"] + ["pp"] * 3
    assert [s.dim_change for s in steps] == [0, 0, 0, 1, 0, 0, 0]
    ref = steps[0]
    assert ref.variant == 1 and step_coefficient(ref) == (2, 1)
    assert [step_coefficient(s) for s in steps[4:]] == [(1, 2), (3, 3), (1, 2)]
    with pytest.raises(DomainError):
        step_coefficient(steps[3])


def test_reversed_step_is_ph():
    steps = classify_path(example_path(1, 1))
    hp = steps[1]
    back = classify_path(ScatteringPath((hp.exit, *reversed(hp.faces), hp.entry)))[0]
    assert hp.cls == "hp" and back.cls == "ph" and back.dim_change == -1


def test_coefficient_tables_cover_every_variant():
    found = {"hh": set(), "pp": set()}
    for stp in single_step_variants():
        if stp.cls in found:
            found[stp.cls].add(stp.variant)
            assert step_coefficient(stp) == derived_coefficient(stp)
    assert found == {"hh": set(range(1, 7)), "pp": set(range(1, 7))}
    assert HH_TABLE[1] == (2, 1) and PP_TABLE[4] == (2, 2) and PP_TABLE[6] == (1, 1)
    assert {v for v in PP_TABLE if PP_TABLE[v] != PP_TABLE_C21[v]} == {3}
    # each table binds every off-diagonal (hh) or a permutation-complete set (pp)
    assert sorted(HH_TABLE.values()) == sorted((i, j) for i in (1, 2, 3) for j in (1, 2, 3) if i != j)
    assert len(set(PP_TABLE.values())) == 6


def test_phi_block_eigenvalues_for_reference_step():
    ref = classify_path(example_path(3, 3))[0]
    c = haar(7)
    ev = np.sort(np.linalg.eigvalsh(phi_block(ref.site, ref, c)))
    col = abs(c[0, 0]) ** 2 + abs(c[2, 0]) ** 2
    row = abs(c[1, 1]) ** 2 + abs(c[1, 2]) ** 2
    assert np.abs(ev - np.sort([0, col, row])).max() <= 1e-12
    assert col == pytest.approx(1 - abs(c[1, 0]) ** 2, abs=1e-12)
    assert phi_norm(ref.site, ref, C0) == pytest.approx(1.0, abs=1e-15)
    with pytest.raises(DomainError):
        phi_block(Site(9, 9, Sub.A), ref, c)


def test_phi_formula_over_random_pairs():
    assert phi_formula_error(100, seed=3) <= 1e-12


def test_single_steps_match_geometric_oracle():
    reg = build_scattering_region(4)
    coins = CoinField(haar(5))
    u = reg.operator(coins).toarray()
    for stp in single_step_variants():
        x = stp.site
        path = ScatteringPath((stp.entry, *stp.faces, stp.exit))
        left = geometric_partition(path, reg)
        assert {j for j, e in reg.incoming[x].items() if left[e]} == set(stp.in_left)
        assert {i for i, e in reg.outgoing[x].items() if left[e]} == set(stp.out_left)
        p = np.diag((~left).astype(float))
        phi = u.conj().T @ p @ u - p
        idx = [reg.incoming[x][j] for j in (1, 2, 3)]
        assert np.abs((phi @ phi)[np.ix_(idx, idx)] - phi_block(x, stp, coins.at(x))).max() <= 1e-12
        # dim Ran(P Q̂_x) − dim Ran(P Q_x) with P onto the right side
        right_out = sum(not left[e] for e in reg.outgoing[x].values())
        right_in = sum(not left[e] for e in reg.incoming[x].values())
        assert right_out - right_in == stp.dim_change


def test_swap_coin_index():
    rep = compute_index(example_path(6, 6), CoinField(SWAP12), 3)
    assert rep.well_defined and rep.index == 1
    assert rep.classification == "trace-class" and rep.trace_estimate == 0.0
    assert all(v <= 1e-15 for s, v in rep.per_site_norms.items() if s != Site(0, 0, Sub.B))


def test_missing_entries_make_phi_undefined():
    path = example_path(6, 6)
    for coin in (C0, IDENTITY):
        rep = compute_index(path, CoinField(coin), 3)
        assert not rep.well_defined and rep.index is None
        assert rep.classification == "not-well-defined"


def test_bounded_and_compact_classes():
    path = example_path(6, 6)
    near = np.array(SWAP12, dtype=complex)
    th = 0.3
    rot = np.array([[np.cos(th), -np.sin(th), 0], [np.sin(th), np.cos(th), 0], [0, 0, 1]])
    rep = compute_index(path, CoinField(rot @ near), 3)
    assert rep.well_defined and rep.index == 1 and rep.classification == "bounded-only"
    # a single perturbed far-away site stays compact
    far = classify_path(path)[0].site
    rep = compute_index(path, CoinField.per_site(SWAP12, {far: rot_small() @ SWAP12}), 3)
    assert rep.index == 1 and rep.classification == "compact"


def rot_small(eps=1e-4):
    return np.array([[1, 0, 0], [0, np.cos(eps), -np.sin(eps)], [0, np.sin(eps), np.cos(eps)]])


def test_index_invariances():
    path = example_path(5, 5)
    coins = CoinField(SWAP12)
    base = compute_index(path, coins, 3)
    # loop insertion
    steps = classify_path(path)
    h = steps[1].entry
    i = path.waypoints.index(h)
    s = steps[1].site
    detour = (trapezoid(s, 2), triangle(s), trapezoid(s, 1), trapezoid(s, 2), h)
    loopy = ScatteringPath(path.waypoints[: i + 1] + detour + path.waypoints[i + 1:])
    assert remove_loops(loopy) == path
    assert compute_index(loopy, coins, 3).index == base.index
    # translation
    assert compute_index(path.translated(1, -1), coins, 5).index == base.index
    # diagonal phase fields leave every coefficient modulus unchanged
    rng = np.random.default_rng(0)
    field = {st.site: np.diag(np.exp(1j * rng.uniform(0, 6, 3))) @ SWAP12 @ np.diag(np.exp(1j * rng.uniform(0, 6, 3)))
             for st in steps}
    rep = compute_index(path, CoinField.per_site(SWAP12, field), 3)
    assert rep.index == base.index and rep.classification == base.classification
    for site, v in base.per_site_norms.items():
        assert rep.per_site_norms[site] == pytest.approx(v, abs=1e-12)


def test_multi_step_transition_is_spliced():
    head = list(example_path(4, 0).waypoints[:-2])
    a00, b00 = Site(0, 0, Sub.A), Site(0, 0, Sub.B)
    mid = [trapezoid(b00, 2), parallelogram(a00, b00), trapezoid(a00, 0)]
    tail = list(example_path(0, 8, j0=-1, k0=0).waypoints)
    path = ScatteringPath(tuple(head + mid + tail))
    raw = [s.cls for s in classify_path(path)]
    assert raw.count("hp") + raw.count("ph") > 1
    norm = classify_path(normalize_path(path))
    assert [s.cls for s in norm].count("hp") == 1
    assert sum(s.dim_change for s in classify_path(path)) == sum(s.dim_change for s in norm) == 1
    assert compute_index(path, CoinField(SWAP12), 3).index == 1


def test_path_errors():
    a = Site(0, 0, Sub.A)
    with pytest.raises(PathError):
        classify_path(ScatteringPath((hexagon(0, 0), hexagon(5, 5))))
    with pytest.raises(PathError):
        classify_path(ScatteringPath((trapezoid(a, 0), triangle(a), trapezoid(a, 1))))
    with pytest.raises(PathError):
        p = parallelogram(a, edge_neighbor(a, 0))
        classify_path(ScatteringPath((p, trapezoid(a, 0), p)))
    loop_path = example_path(2, 0).waypoints
    twice = loop_path + loop_path[1:]
    with pytest.raises(PathError):
        classify_path(ScatteringPath(twice))
    with pytest.raises(PathError):
        compute_index(example_path(3, 0), CoinField(SWAP12), 3)
    with pytest.raises(PathError):
        compute_index(example_path(6, 6, j0=6), CoinField(SWAP12), 3)
    with pytest.raises(InputError):
        compute_index(example_path(3, 3), SWAP12, 3)


def test_path_file_roundtrip_and_errors():
    path = example_path(4, 4)
    text = "# example\n" + path.dumps()
    assert ScatteringPath.loads(text) == path
    with pytest.raises(InputError):
        ScatteringPath.loads("hexagon 1\n")
    with pytest.raises(InputError):
        ScatteringPath.loads("hexagon a b\n")


@settings(max_examples=20, deadline=None)
@given(st.integers(-3, 3), st.integers(-3, 3), st.integers(1, 5), st.integers(1, 5))
def test_example_paths_have_index_one(j0, k0, n_hh, n_pp):
    path = example_path(n_hh, n_pp, j0, k0)
    assert sum(s.dim_change for s in classify_path(path)) == 1
    assert shift_target(Site(j0, k0, Sub.B), 2) == Site(j0, k0, Sub.A)


def test_report_json():
    rep = compute_index(example_path(4, 4), CoinField(SWAP12), 3)
    d = json.loads(rep.to_json())
    assert d["index"] == 1 and d["classification"] == "trace-class"
    assert {s["class"] for s in d["steps"]} == {"hh", "hp", "pp"}
    bad = json.loads(compute_index(example_path(4, 4), CoinField(C0), 3).to_json())
    assert bad["index"] == "undefined" and bad["well_defined"] is False
