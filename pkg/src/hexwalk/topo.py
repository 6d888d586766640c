"""Scattering graph, faces, relevant paths and the flux index.

Geometry
--------
Integer coordinates ``(X, Y)`` measure x in units of √3/2 and y in units of
1/2, so A(j,k) sits at (2j+k, 3k) and B(j,k) at (2j+k, 3k+2).  Face centers
are stored at twice these coordinates, which keeps every center integral.

Around a site the three edges are indexed 0, 1, 2 counterclockwise; on both
sublattices this is the order of shift directions (3, 1, 2).  Each edge
carries two directed edge centers drawn on the right of their direction of
travel, so going counterclockwise around a site x one meets, for edge a,
first the outgoing center then the incoming one.  Sector a lies between
edges a and a+1 and faces one hexagon.

The flux projection P is onto the edge centers right of the path, so an
hp step counts +1 and a ph step −1.  Φ² and hence every ‖ΦQ_x‖ are the
same for P and its complement.

The cell of x (its triangle and three trapezoids, plus the halves of the
parallelograms next to x) has six sides: G_a opens onto the parallelogram of
edge a and H_a onto the hexagon of sector a.  A step enters through one side
and leaves through another; the edge centers met counterclockwise from the
exit side to the entry side are the ones on its left.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp

from .errors import DomainError, InputError, PathError
from .lattice import ORIGIN, BasisElement, Site, Sub, graph_distance, shift_target
from .operators import CoinField

WELL_DEFINED_TOL = 1e-8
COMPACT_TOL = 1e-6
TRACE_TAIL_BOUND = 1e-6

EDGE_DIRECTIONS = (3, 1, 2)  # counterclockwise edge order, same on A and B

# Coefficient (i, j) of c_ij bound by each step variant.  The hh values are
# the reflection amplitudes of A (variants 1-3) and B (variants 4-6) sites.
HH_TABLE = {1: (2, 1), 2: (1, 3), 3: (3, 2), 4: (2, 3), 5: (3, 1), 6: (1, 2)}
# pp variants γ1..γ6.  Flagged: a tabulated value of c21 for γ3 is in
# circulation; the direct computation of Φ²Q_x for that step (A site, the
# remaining A transmission) gives c12, and c21 cannot be a pp coefficient on
# an A site at all since it is the reflection on the edge towards
# B(j+1,k-1).  We use (1, 2); the swap coin example is symmetric in this entry.
PP_TABLE = {1: (2, 3), 2: (3, 1), 3: (1, 2), 4: (2, 2), 5: (3, 3), 6: (1, 1)}
PP_TABLE_C21 = {**PP_TABLE, 3: (2, 1)}  # the flagged alternative, for comparison only


# -- geometry ---------------------------------------------------------------

def site_xy(s: Site) -> tuple[int, int]:
    return 2 * s.j + s.k, 3 * s.k + (2 if s.sub == Sub.B else 0)


def site_at(x: int, y: int) -> Site | None:
    r = y % 3
    if r == 1:
        return None
    k = (y - r) // 3
    if (x - k) % 2:
        return None
    return Site((x - k) // 2, k, Sub.B if r == 2 else Sub.A)


def edge_neighbor(s: Site, a: int) -> Site:
    return shift_target(s, EDGE_DIRECTIONS[a % 3])


def out_coin(s: Site, a: int) -> int:
    """Coin of the outgoing edge center x → neighbor along edge a."""
    return EDGE_DIRECTIONS[a % 3]


def in_coin(s: Site, a: int) -> int:
    """Coin of the incoming edge center neighbor → x along edge a."""
    y = edge_neighbor(s, a)
    for c in (1, 2, 3):
        if shift_target(y, c) == s:
            return c
    raise AssertionError("shift rules are not consistent")


def edge_index(s: Site, other: Site) -> int:
    for a in range(3):
        if edge_neighbor(s, a) == other:
            return a
    raise DomainError(f"{other} is not adjacent to {s}")


def hex_xy(s: Site, a: int) -> tuple[int, int]:
    """Center of the hexagon in sector a of s (single-scale coordinates)."""
    x0, y0 = site_xy(s)
    x1, y1 = site_xy(edge_neighbor(s, a))
    x2, y2 = site_xy(edge_neighbor(s, a + 1))
    return x1 + x2 - x0, y1 + y2 - y0


def hex_id(s: Site, a: int) -> tuple[int, int]:
    x, y = hex_xy(s, a)
    # hexagon (j, k) is centered at A(j,k) + (1, 1)
    k = (y - 1) // 3
    return (x - 1 - k) // 2, k


class Face(NamedTuple):
    kind: str
    key: tuple

    def __repr__(self):
        return f"{self.kind}{self.key}"


KINDS = ("triangle", "trapezoid", "parallelogram", "hexagon")


def triangle(s: Site) -> Face:
    return Face("triangle", (s.j, s.k, int(s.sub)))


def trapezoid(s: Site, a: int) -> Face:
    return Face("trapezoid", (s.j, s.k, int(s.sub), a % 3))


def parallelogram(x: Site, y: Site) -> Face:
    a_site = x if x.sub == Sub.A else y
    other = y if a_site is x else x
    return Face("parallelogram", (a_site.j, a_site.k, edge_index(a_site, other)))


def hexagon(j: int, k: int) -> Face:
    return Face("hexagon", (j, k))


def _site(key) -> Site:
    return Site(key[0], key[1], Sub(key[2]))


def par_endpoints(f: Face) -> tuple[Site, Site]:
    a = Site(f.key[0], f.key[1], Sub.A)
    return a, edge_neighbor(a, f.key[2])


def hex_vertices(f: Face) -> list[tuple[Site, int]]:
    """The six (site, sector) pairs facing hexagon ``f``."""
    j, k = f.key
    cx, cy = 2 * j + k + 1, 3 * k + 1
    out = []
    for dx, dy in ((-1, -1), (0, -2), (1, -1), (1, 1), (0, 2), (-1, 1)):
        s = site_at(cx + dx, cy + dy)
        for a in range(3):
            if hex_xy(s, a) == (cx, cy):
                out.append((s, a))
    return out


def face_center(f: Face) -> tuple[int, int]:
    """Center in doubled integer coordinates."""
    if f.kind == "triangle":
        x, y = site_xy(_site(f.key))
        return 2 * x, 2 * y
    if f.kind == "trapezoid":
        s = _site(f.key)
        x, y = site_xy(s)
        hx, hy = hex_xy(s, f.key[3])
        return x + hx, y + hy
    if f.kind == "parallelogram":
        a, b = par_endpoints(f)
        (x1, y1), (x2, y2) = site_xy(a), site_xy(b)
        return x1 + x2, y1 + y2
    if f.kind == "hexagon":
        j, k = f.key
        return 2 * (2 * j + k + 1), 2 * (3 * k + 1)
    raise DomainError(f"unknown face kind {f.kind!r}")


def face_at(kind: str, x2: int, y2: int) -> Face:
    """Inverse of face_center."""
    if kind == "triangle":
        if x2 % 2 or y2 % 2 or site_at(x2 // 2, y2 // 2) is None:
            raise InputError(f"no triangle at ({x2}, {y2})")
        return triangle(site_at(x2 // 2, y2 // 2))
    if kind == "hexagon":
        if x2 % 2 or y2 % 2 or (y2 // 2 - 1) % 3 or (x2 // 2 - 1 - (y2 // 2 - 1) // 3) % 2:
            raise InputError(f"no hexagon at ({x2}, {y2})")
        k = (y2 // 2 - 1) // 3
        return hexagon((x2 // 2 - 1 - k) // 2, k)
    if kind == "parallelogram":
        for dx, dy in ((0, 2), (-1, -1), (1, -1)):  # B − A offsets
            ax, ay = x2 - dx, y2 - dy
            if ax % 2 == 0 and ay % 2 == 0:
                a = site_at(ax // 2, ay // 2)
                if a is not None and a.sub == Sub.A:
                    b = site_at(ax // 2 + dx, ay // 2 + dy)
                    if b is not None:
                        return parallelogram(a, b)
        raise InputError(f"no parallelogram at ({x2}, {y2})")
    if kind == "trapezoid":
        # trapezoid centers are site + hexagon center; try the nearby sites
        for dx in range(-2, 3):
            for dy in range(-3, 4):
                s = site_at((x2 + dx) // 2, (y2 + dy) // 2) if (x2 + dx) % 2 == 0 and (y2 + dy) % 2 == 0 else None
                if s is None:
                    continue
                for a in range(3):
                    if face_center(trapezoid(s, a)) == (x2, y2):
                        return trapezoid(s, a)
        raise InputError(f"no trapezoid at ({x2}, {y2})")
    raise InputError(f"unknown face kind {kind!r}")


def face_neighbors(f: Face) -> list[Face]:
    """Faces sharing a side with ``f`` (corner contacts are not adjacency)."""
    if f.kind == "triangle":
        s = _site(f.key)
        return [trapezoid(s, a) for a in range(3)]
    if f.kind == "trapezoid":
        s, a = _site(f.key), f.key[3]
        return [
            triangle(s),
            hexagon(*hex_id(s, a)),
            parallelogram(s, edge_neighbor(s, a)),
            parallelogram(s, edge_neighbor(s, a + 1)),
        ]
    if f.kind == "parallelogram":
        out = []
        for s, t in (par_endpoints(f), par_endpoints(f)[::-1]):
            a = edge_index(s, t)
            out += [trapezoid(s, a - 1), trapezoid(s, a)]
        return out
    if f.kind == "hexagon":
        return [trapezoid(s, a) for s, a in hex_vertices(f)]
    raise DomainError(f"unknown face kind {f.kind!r}")


def face_sites(f: Face) -> list[Site]:
    if f.kind in ("triangle", "trapezoid"):
        return [_site(f.key)]
    if f.kind == "parallelogram":
        return list(par_endpoints(f))
    return [s for s, _ in hex_vertices(f)]


def translate_face(f: Face, dj: int, dk: int) -> Face:
    if f.kind == "hexagon":
        return Face(f.kind, (f.key[0] + dj, f.key[1] + dk))
    return Face(f.kind, (f.key[0] + dj, f.key[1] + dk) + tuple(f.key[2:]))


# -- steps ------------------------------------------------------------------

@dataclass(frozen=True)
class Step:
    site: Site
    entry: Face
    exit: Face
    entry_side: int      # 2a for G_a, 2a + 1 for H_a
    exit_side: int
    faces: tuple[Face, ...]
    in_left: frozenset[int]
    out_left: frozenset[int]

    @property
    def cls(self) -> str:
        kinds = ("h" if self.entry.kind == "hexagon" else "p") + ("h" if self.exit.kind == "hexagon" else "p")
        return kinds

    @property
    def dim_change(self) -> int:
        """dim Ran(P Q̂_x) − dim Ran(P Q_x) with P projecting onto the right side."""
        return len(self.in_left) - len(self.out_left)

    @property
    def variant(self) -> int | None:
        if self.cls not in ("hh", "pp"):
            return None
        pair = derived_coefficient(self)
        table = HH_TABLE if self.cls == "hh" else PP_TABLE
        for v, p in table.items():
            if p == pair:
                return v
        raise AssertionError(f"step binds {pair}, which is not in the {self.cls} table")


def _side_of(station: Face, s: Site) -> int:
    if station.kind == "hexagon":
        for t, a in hex_vertices(station):
            if t == s:
                return 2 * a + 1
    elif station.kind == "parallelogram":
        x, y = par_endpoints(station)
        if s in (x, y):
            return 2 * edge_index(s, y if s == x else x)
    raise PathError(f"{station} does not touch {s}")


def left_partition(s: Site, entry_side: int, exit_side: int) -> tuple[frozenset[int], frozenset[int]]:
    """Coins of incoming and outgoing centers of s lying left of the step."""
    if entry_side == exit_side:
        raise PathError("a step cannot leave through the side it entered")
    # counterclockwise ring: out_a, G_a, in_a, H_a for a = 0, 1, 2
    ring = []
    for a in range(3):
        ring += [("out", a), ("side", 2 * a), ("in", a), ("side", 2 * a + 1)]
    pos = {item[1]: i for i, item in enumerate(ring) if item[0] == "side"}
    ins, outs = set(), set()
    i = (pos[exit_side] + 1) % 12
    while i != pos[entry_side]:
        tag, a = ring[i]
        if tag == "in":
            ins.add(in_coin(s, a))
        elif tag == "out":
            outs.add(out_coin(s, a))
        i = (i + 1) % 12
    return frozenset(ins), frozenset(outs)


def derived_coefficient(step: Step) -> tuple[int, int]:
    """(i, j) of the lone outgoing/incoming pair on one side of an hh/pp step."""
    ins, outs = step.in_left, step.out_left
    if len(ins) != len(outs) or len(ins) not in (1, 2):
        raise DomainError(f"{step.cls} step at {step.site} binds no coefficient")
    if len(ins) == 2:
        ins, outs = {1, 2, 3} - ins, {1, 2, 3} - outs
    return next(iter(outs)), next(iter(ins))


@dataclass(frozen=True)
class ScatteringPath:
    waypoints: tuple[Face, ...]

    def __post_init__(self):
        object.__setattr__(self, "waypoints", tuple(self.waypoints))

    def translated(self, dj: int, dk: int) -> "ScatteringPath":
        return ScatteringPath(tuple(translate_face(f, dj, dk) for f in self.waypoints))

    def steps(self) -> list[Step]:
        return classify_path(self)

    def dumps(self) -> str:
        lines = [f"{f.kind} {x} {y}" for f in self.waypoints for x, y in [face_center(f)]]
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "ScatteringPath":
        faces = []
        for n, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 3:
                raise InputError(f"line {n}: expected 'kind x y', got {line!r}")
            try:
                x, y = int(parts[1]), int(parts[2])
            except ValueError as exc:
                raise InputError(f"line {n}: coordinates must be integers") from exc
            faces.append(face_at(parts[0], x, y))
        return cls(tuple(faces))


def check_adjacency(path: ScatteringPath) -> None:
    for i, (f, g) in enumerate(zip(path.waypoints, path.waypoints[1:])):
        if g not in face_neighbors(f):
            raise PathError(f"waypoints {i} and {i + 1} ({f} -> {g}) do not share a side")


def classify_path(path: ScatteringPath) -> list[Step]:
    """Split the path at hexagons/parallelograms into steps passing single sites."""
    check_adjacency(path)
    w = path.waypoints
    stations = [i for i, f in enumerate(w) if f.kind in ("hexagon", "parallelogram")]
    if not stations or stations[0] != 0 or stations[-1] != len(w) - 1:
        raise PathError("a path must start and end on a hexagon or parallelogram")
    steps, seen = [], set()
    for i0, i1 in zip(stations, stations[1:]):
        inner = w[i0 + 1:i1]
        sites = {_site(f.key) for f in inner}
        if len(sites) != 1:
            raise PathError(f"waypoints {i0}..{i1} do not pass a single site")
        s = sites.pop()
        if s in seen:
            raise PathError(f"site {s} is passed twice")
        seen.add(s)
        es, xs = _side_of(w[i0], s), _side_of(w[i1], s)
        ins, outs = left_partition(s, es, xs)
        steps.append(Step(s, w[i0], w[i1], es, xs, tuple(inner), ins, outs))
    return steps


def step_coefficient(step: Step) -> tuple[int, int]:
    """Coin entry (i, j) whose modulus fixes ‖ΦQ_x‖ for an hh or pp step."""
    if step.cls == "hh":
        return HH_TABLE[step.variant]
    if step.cls == "pp":
        return PP_TABLE[step.variant]
    raise DomainError(f"{step.cls} steps carry no coefficient")


def phi_block(x: Site, step: Step, coin: np.ndarray) -> np.ndarray:
    """Φ²Q_x on the incoming space of x, in the coin basis e1, e2, e3."""
    if step.site != x:
        raise DomainError(f"step passes {step.site}, not {x}")
    c = np.asarray(coin, dtype=complex)
    p_in = np.diag([1.0 if j in step.in_left else 0.0 for j in (1, 2, 3)])
    p_out = np.diag([1.0 if i in step.out_left else 0.0 for i in (1, 2, 3)])
    eye = np.eye(3)
    return p_in @ c.conj().T @ (eye - p_out) @ c @ p_in + (eye - p_in) @ c.conj().T @ p_out @ c @ (eye - p_in)


def phi_norm(x: Site, step: Step, coin: np.ndarray) -> float:
    ev = np.linalg.eigvalsh(phi_block(x, step, coin))
    return float(np.sqrt(max(ev.max(), 0.0)))


# -- normalization ----------------------------------------------------------

def remove_loops(path: ScatteringPath) -> ScatteringPath:
    out: list[Face] = []
    pos: dict[Face, int] = {}
    for f in path.waypoints:
        if f in pos:
            cut = pos[f]
            for g in out[cut + 1:]:
                del pos[g]
            del out[cut + 1:]
        else:
            pos[f] = len(out)
            out.append(f)
    return ScatteringPath(tuple(out))


def _legs(steps: list[Step]) -> tuple[int, int]:
    """(number of leading hh steps, index of the first trailing pp step)."""
    n = len(steps)
    first = 0
    while first < n and steps[first].cls == "hh":
        first += 1
    last = n
    while last > 0 and steps[last - 1].cls == "pp":
        last -= 1
    return first, last


def _hh_faces(s: Site, a: int, b: int) -> list[Face]:
    return [trapezoid(s, a), triangle(s), trapezoid(s, b)]


def _hp_faces(s: Site, a: int, e: int) -> list[Face]:
    if e % 3 in (a, (a + 1) % 3):
        return [trapezoid(s, a)]
    return [trapezoid(s, a), triangle(s), trapezoid(s, e)]


def _splice(path: ScatteringPath, steps: list[Step], first: int, last: int) -> ScatteringPath:
    """Reconnect the hh and pp legs with hh steps and a single hp step."""
    start = steps[first].entry            # hexagon where the hh leg ends
    target = steps[last].entry            # parallelogram where the pp leg starts
    used = {st.site for st in steps[:first]} | {st.site for st in steps[last:]}
    used_faces = set()
    for st in steps[:first] + steps[last:]:
        used_faces |= {st.entry, st.exit, *st.faces}
    used_faces.discard(start)
    used_faces.discard(target)
    x, y = par_endpoints(target)
    hp_site = y if steps[last].site == x else x
    if hp_site in used:
        raise PathError("cannot splice: the parallelogram's free endpoint is already used")
    e = edge_index(hp_site, x if hp_site == y else y)
    goals = {hexagon(*hex_id(hp_site, a)): a for a in range(3)}
    prev: dict[Face, tuple[Face, Site, int, int] | None] = {start: None}
    queue = [start]
    found = None
    while queue and found is None:
        nxt = []
        for h in queue:
            if h in goals and h not in used_faces:
                found = h
                break
            for s, a in hex_vertices(h):
                if s in used or s == hp_site:
                    continue
                for b in range(3):
                    g = hexagon(*hex_id(s, b))
                    if b == a or g in prev or g in used_faces:
                        continue
                    prev[g] = (h, s, a, b)
                    nxt.append(g)
        queue = nxt
    if found is None:
        raise PathError("cannot splice: no hh route to the pp leg")
    chain = []
    h = found
    while prev[h] is not None:
        g, s, a, b = prev[h]
        chain.append((s, a, b, h))
        h = g
    middle = []
    for s, a, b, h in reversed(chain):
        middle += _hh_faces(s, a, b) + [h]
    middle += _hp_faces(hp_site, goals[found], e)
    w = path.waypoints
    i_start = w.index(start)
    i_target = len(w) - 1 - w[::-1].index(target)
    return ScatteringPath(w[:i_start + 1] + tuple(middle) + w[i_target:])


def normalize_path(path: ScatteringPath) -> ScatteringPath:
    """Excise loops; replace a multi-step transition by a single hp step."""
    path = remove_loops(path)
    steps = classify_path(path)
    first, last = _legs(steps)
    if 0 < first and last < len(steps) and last - first > 1:
        path = remove_loops(_splice(path, steps, first, last))
    return path


# -- index ------------------------------------------------------------------

def norm_of(x: Site) -> int:
    return graph_distance(ORIGIN, x)


@dataclass
class PhiReport:
    well_defined: bool
    index: int | None
    classification: str
    trace_estimate: float
    per_site_norms: dict[Site, float]
    steps: list[Step] = field(repr=False, default_factory=list)
    notes: dict = field(default_factory=dict)

    def to_json(self) -> str:
        d = {
            "well_defined": self.well_defined,
            "index": self.index if self.index is not None else "undefined",
            "classification": self.classification,
            "trace_estimate": self.trace_estimate,
            "per_site_norms": [
                {"j": s.j, "k": s.k, "sub": Sub(s.sub).name, "norm": v}
                for s, v in sorted(self.per_site_norms.items())
            ],
            "steps": [
                {"site": [st.site.j, st.site.k, Sub(st.site.sub).name], "class": st.cls,
                 "variant": st.variant, "dim_change": st.dim_change}
                for st in self.steps
            ],
            "notes": self.notes,
        }
        return json.dumps(d, indent=2, sort_keys=False)


def compute_index(path: ScatteringPath, coins: CoinField, radius: int,
                  threshold: float = WELL_DEFINED_TOL, compact_tol: float = COMPACT_TOL,
                  trace_tail_bound: float = TRACE_TAIL_BOUND) -> PhiReport:
    """Index and Φ classification for a relevant path.

    Sites farther than ``radius`` from the origin stand in for the asymptotic
    legs; all hp/ph steps must lie within ``radius``.
    """
    if not isinstance(coins, CoinField):
        raise InputError("coins must be a CoinField")
    steps = classify_path(normalize_path(path))
    first, last = _legs(steps)
    if first == 0 or last == len(steps):
        raise PathError("path is not relevant: it needs an hh leg first and a pp leg last")
    for st in steps[first:last]:
        if norm_of(st.site) > radius:
            raise PathError(f"transition step at {st.site} lies outside radius {radius}")
    norms, coeffs, comp = {}, {}, {}
    for st in steps:
        c = coins.at(st.site)
        if st.cls in ("hh", "pp"):
            i, j = step_coefficient(st)
            coeffs[st.site] = abs(c[i - 1, j - 1])
            # sqrt(1 - |c_ij|^2) from the rest of the unitary column, free of cancellation
            comp[st.site] = float(np.linalg.norm(np.delete(c[:, j - 1], i - 1)))
            norms[st.site] = comp[st.site]
        else:
            norms[st.site] = phi_norm(st.site, st, c)
    far = [s for s in coeffs if norm_of(s) > radius]
    inf_c = min((coeffs[s] for s in far), default=1.0)
    well_defined = bool(inf_c > threshold)
    trace = float(sum(comp.values()))
    reach = max(norm_of(s) for s in coeffs)
    outer = [s for s in coeffs if norm_of(s) > reach / 2]
    notes = {"radius": radius, "outer_half_sites": len(outer), "inf_far_coefficient": inf_c,
             "finite_region_verdict": True, "index_sign": "P projects onto the right of the path; hp = +1, ph = -1"}
    if not well_defined:
        return PhiReport(False, None, "not-well-defined", trace, norms, steps, notes)
    index = int(sum(st.dim_change for st in steps))
    min_outer = min((coeffs[s] for s in outer), default=1.0)
    tail = float(sum(comp[s] for s in outer))
    notes.update(min_outer_coefficient=min_outer, outer_tail_sum=tail)
    if min_outer < 1 - compact_tol:
        cls = "bounded-only"
    elif tail > trace_tail_bound:
        cls = "compact"
    else:
        cls = "trace-class"
    return PhiReport(True, index, cls, trace, norms, steps, notes)


# -- example paths ----------------------------------------------------------

def example_path(n_hh: int, n_pp: int, j0: int = 0, k0: int = 0) -> ScatteringPath:
    """A relevant path with a single hp step at B(j0,k0).

    The hh leg runs down the hexagon column hex(j0, k) crossing the edges
    A(j0,k)–B(j0+1,k−1) at their A end (coefficient c21); the pp leg then
    follows the zigzag chain through A(j0, k0−m) and B(j0, k0−m−1), binding
    c12 on A and c33 on B.
    """
    w: list[Face] = []
    for k in range(k0 + n_hh, k0, -1):
        a = Site(j0, k, Sub.A)
        w += [hexagon(j0, k), trapezoid(a, 2), triangle(a), trapezoid(a, 1)]
    b0 = Site(j0, k0, Sub.B)
    w += [hexagon(j0, k0), trapezoid(b0, 2)]
    for m in range(n_pp):
        a = Site(j0, k0 - (m + 1) // 2, Sub.A)
        if m % 2 == 0:
            w += [parallelogram(a, shift_target(a, 3)), trapezoid(a, 0)]
        else:
            b = Site(j0, k0 - (m + 1) // 2, Sub.B)
            w += [parallelogram(b, shift_target(b, 3)), trapezoid(b, 2)]
    last = w[-1]
    s = _site(last.key)
    w.append(parallelogram(s, edge_neighbor(s, last.key[3])) if s.sub == Sub.B
             else parallelogram(s, edge_neighbor(s, 1)))
    return ScatteringPath(tuple(w))


# -- scattering graph -------------------------------------------------------

class EdgeCenter(NamedTuple):
    id: int
    frm: Site
    to: Site


@dataclass
class ScatteringRegion:
    radius: int
    sites: list[Site]
    edges: list[EdgeCenter]
    edge_id: dict[tuple[Site, Site], int]
    links: list[tuple[int, int, Site, int, int]]   # (in edge, out edge, site, i, j)
    incoming: dict[Site, dict[int, int]]            # site -> coin j -> edge id
    outgoing: dict[Site, dict[int, int]]            # site -> coin i -> edge id

    def basis_element(self, e: int) -> BasisElement:
        """𝒱: directed edge x → y is the coin state of y that arrived along it."""
        edge = self.edges[e]
        for i in (1, 2, 3):
            if shift_target(edge.frm, i) == edge.to:
                return BasisElement(edge.to, i)
        raise AssertionError("edge endpoints are not adjacent")

    def operator(self, coins: CoinField) -> sp.csr_matrix:
        """𝒰 on the edge space: incoming e_j of x → Σ_i c_ij outgoing ẽ_i."""
        rows, cols, vals = [], [], []
        for e_in, e_out, s, i, j in self.links:
            rows.append(e_out)
            cols.append(e_in)
            vals.append(coins.at(s)[i - 1, j - 1])
        n = len(self.edges)
        return sp.csr_matrix((vals, (rows, cols)), shape=(n, n), dtype=complex)


def build_scattering_region(radius: int) -> ScatteringRegion:
    """Directed edges and links around all sites within ``radius`` of the origin."""
    if radius < 2:
        raise DomainError("radius must be at least 2")
    sites = []
    for dj in range(-radius - 1, radius + 2):
        for dk in range(-radius - 1, radius + 2):
            for sub in (Sub.A, Sub.B):
                s = Site(dj, dk, sub)
                if norm_of(s) <= radius:
                    sites.append(s)
    sites.sort()
    edges, edge_id = [], {}

    def add(x, y):
        if (x, y) not in edge_id:
            edge_id[(x, y)] = len(edges)
            edges.append(EdgeCenter(len(edges), x, y))
        return edge_id[(x, y)]

    incoming, outgoing, links = {}, {}, []
    for s in sites:
        incoming[s], outgoing[s] = {}, {}
        for a in range(3):
            t = edge_neighbor(s, a)
            outgoing[s][out_coin(s, a)] = add(s, t)
            incoming[s][in_coin(s, a)] = add(t, s)
        for j, e_in in incoming[s].items():
            for i, e_out in outgoing[s].items():
                links.append((e_in, e_out, s, i, j))
    return ScatteringRegion(radius, sites, edges, edge_id, links, incoming, outgoing)


def geometric_partition(path: ScatteringPath, region: ScatteringRegion, offset: float = 0.1,
                        far: float = 1e3) -> np.ndarray:
    """Edge centers left of ``path`` by a planar winding-number test.

    Independent of the combinatorial step rule: centers are placed at edge
    midpoints shifted by ``offset`` to the right of their direction, the path
    is the polyline through face centers, extended along its end directions
    and closed by a large clockwise arc (enclosing the right side).
    """
    def phys(f):
        x2, y2 = face_center(f)
        return np.array([x2 * math.sqrt(3) / 4, y2 / 4])

    def outward(end, nxt):
        # a path crosses a parallelogram along its edge, and a hexagon radially
        if end.kind == "parallelogram":
            here = _site(nxt.key)
            a, b = par_endpoints(end)
            other = b if here == a else a
            return np.array(_xy_phys(other)) - np.array(_xy_phys(here))
        return phys(end) - phys(nxt)

    w = path.waypoints
    pts = [phys(f) for f in w]
    d0, d1 = outward(w[0], w[1]), outward(w[-1], w[-2])
    start = pts[0] + far * d0 / np.linalg.norm(d0)
    end = pts[-1] + far * d1 / np.linalg.norm(d1)
    big = 10 * far
    t_end = math.atan2(end[1], end[0])
    t_start = math.atan2(start[1], start[0])
    span = (t_end - t_start) % (2 * math.pi)  # clockwise sweep from end to start
    arc = [big * np.array([math.cos(t_end - span * u), math.sin(t_end - span * u)])
           for u in np.linspace(0, 1, 400)]
    poly = np.array([start, *pts, end, *arc])

    def winding(p):
        v = poly - p
        ang = np.arctan2(v[:, 1], v[:, 0])
        d = np.diff(np.r_[ang, ang[0]])
        d = (d + np.pi) % (2 * np.pi) - np.pi
        return round(d.sum() / (2 * np.pi))

    left = np.zeros(len(region.edges), dtype=bool)
    for e in region.edges:
        a, b = np.array(_xy_phys(e.frm)), np.array(_xy_phys(e.to))
        t = (b - a) / np.linalg.norm(b - a)
        p = (a + b) / 2 + offset * np.array([t[1], -t[0]])
        left[e.id] = winding(p) == 0
    return left


def _xy_phys(s: Site) -> tuple[float, float]:
    x, y = site_xy(s)
    return x * math.sqrt(3) / 2, y / 2
