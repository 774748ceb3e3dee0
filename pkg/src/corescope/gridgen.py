"""Grid-world railway infrastructure: track elements, generator, topology graph.

Headings and cell sides share one encoding: ``N=0, E=1, S=2, W=3``. A heading
is the direction of travel; a side is the cell edge a track touches. A train
entering through side ``s`` travels with heading ``(s + 2) % 4``.
"""
from __future__ import annotations

import heapq
import json
import math
import random
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Iterable

from corescope.errors import GenerationFailed, InconsistentTransitions

N, E, S, W = 0, 1, 2, 3
HEADING_NAMES = "NESW"
DELTA = {N: (-1, 0), E: (0, 1), S: (1, 0), W: (0, -1)}

Cell = tuple[int, int]
Waypoint = tuple[int, int, int]  # (row, col, heading)
Connection = tuple[int, int]  # pair of sides, sorted

SCHEMA_VERSION = 1


def opposite(h: int) -> int:
    return (h + 2) % 4


def step(cell: Cell, heading: int) -> Cell:
    dr, dc = DELTA[heading]
    return cell[0] + dr, cell[1] + dc


class Kind(str, Enum):
    STRAIGHT = "straight"
    SIMPLE_SWITCH = "simple_switch"
    DIAMOND_CROSSING = "diamond_crossing"
    SINGLE_SLIP = "single_slip"
    DOUBLE_SLIP = "double_slip"
    SYMMETRICAL_SWITCH = "symmetrical_switch"
    DEAD_END = "dead_end"
    CURVE = "curve"


def _conn(a: int, b: int) -> Connection:
    return (a, b) if a <= b else (b, a)


# Side connections at rotation 0. A dead end is a side connected to itself.
_BASE: dict[Kind, frozenset[Connection]] = {
    Kind.STRAIGHT: frozenset({_conn(S, N)}),
    Kind.SIMPLE_SWITCH: frozenset({_conn(S, N), _conn(S, W)}),
    Kind.DIAMOND_CROSSING: frozenset({_conn(S, N), _conn(E, W)}),
    Kind.SINGLE_SLIP: frozenset({_conn(S, N), _conn(E, W), _conn(S, W)}),
    Kind.DOUBLE_SLIP: frozenset({_conn(S, N), _conn(E, W), _conn(S, W), _conn(N, E)}),
    Kind.SYMMETRICAL_SWITCH: frozenset({_conn(S, W), _conn(S, E)}),
    Kind.DEAD_END: frozenset({_conn(S, S)}),
    Kind.CURVE: frozenset({_conn(S, E)}),
}


def rotate_connections(conns: Iterable[Connection], rotation: int) -> frozenset[Connection]:
    return frozenset(_conn((a + rotation) % 4, (b + rotation) % 4) for a, b in conns)


def connections_of(kind: Kind, rotation: int) -> frozenset[Connection]:
    return rotate_connections(_BASE[Kind(kind)], rotation % 4)


def matrix_from_connections(conns: Iterable[Connection]) -> tuple[tuple[bool, ...], ...]:
    m = [[False] * 4 for _ in range(4)]
    for a, b in conns:
        # enter through side a (heading opposite(a)), leave through side b
        m[opposite(a)][b] = True
        m[opposite(b)][a] = True
    return tuple(tuple(row) for row in m)


def transitions_of(kind: Kind, rotation: int) -> tuple[tuple[bool, ...], ...]:
    """4x4 matrix, row = incoming heading, column = outgoing heading."""
    return matrix_from_connections(connections_of(kind, rotation))


def matrix_bits(matrix: tuple[tuple[bool, ...], ...]) -> int:
    """16-bit encoding, bit ``4 * incoming + outgoing``."""
    return sum(1 << (4 * i + j) for i in range(4) for j in range(4) if matrix[i][j])


@dataclass(frozen=True)
class CellType:
    kind: Kind
    rotation: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        if self.rotation not in (0, 1, 2, 3):
            raise ValueError(f"rotation must be 0..3, got {self.rotation}")

    @property
    def transitions(self) -> tuple[tuple[bool, ...], ...]:
        return transitions_of(self.kind, self.rotation)

    @property
    def connections(self) -> frozenset[Connection]:
        return connections_of(self.kind, self.rotation)


def _build_classifier() -> dict[frozenset[Connection], CellType]:
    table: dict[frozenset[Connection], CellType] = {}
    for kind in Kind:
        for rot in range(4):
            table.setdefault(connections_of(kind, rot), CellType(kind, rot))
    return table


_CLASSIFY = _build_classifier()


def classify(conns: Iterable[Connection]) -> CellType | None:
    """Element matching a set of side connections, or None if none of the eight does."""
    return _CLASSIFY.get(frozenset(conns))


# ---------------------------------------------------------------------------
# Infrastructure records
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Port:
    cell: Cell
    outward: int  # heading of a train leaving the city through this port

    @property
    def outside(self) -> Cell:
        return step(self.cell, self.outward)


@dataclass(frozen=True)
class City:
    city_id: int
    center: Cell
    parallel_tracks: int
    rotation: int
    bbox: tuple[int, int, int, int]  # r0, c0, r1, c1 inclusive
    ports: tuple[Port, Port]  # (entry-side, exit-side)
    platforms: tuple[Cell, ...]


@dataclass(frozen=True)
class TrainSpec:
    train_id: int
    origin: Cell
    heading: int
    target: Cell
    speed: Fraction
    origin_city: int
    target_city: int

    @property
    def steps_per_cell(self) -> int:
        return math.ceil(1 / self.speed)

    @property
    def start(self) -> Waypoint:
        return (self.origin[0], self.origin[1], self.heading)


DEFAULT_SPEED_DATA = {Fraction(1): 0.25, Fraction(1, 2): 0.25, Fraction(1, 3): 0.25, Fraction(1, 4): 0.25}


@dataclass
class InfraParams:
    width: int = 40
    height: int = 40
    max_num_cities: int = 4
    max_rail_between_cities: int = 1
    max_rail_in_city: int = 2
    number_of_agents: int = 8
    speed_data: dict = field(default_factory=lambda: dict(DEFAULT_SPEED_DATA))
    platform_length: int = 3
    city_margin: int = 2
    max_attempts: int = 25

    def validate(self) -> None:
        if self.max_num_cities < 2:
            raise ValueError("max_num_cities must be >= 2")
        if self.max_rail_in_city < 1 or self.max_rail_between_cities < 1:
            raise ValueError("rail counts must be >= 1")
        if self.number_of_agents < 1:
            raise ValueError("number_of_agents must be >= 1")
        side = _footprint_side(self.max_rail_in_city, self.platform_length) + 2 * self.city_margin
        if self.width < side or self.height < side:
            raise ValueError(f"grid {self.width}x{self.height} smaller than city footprint {side}")

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__ if k != "speed_data"}
        d["speed_data"] = {str(Fraction(k)): v for k, v in self.speed_data.items()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "InfraParams":
        d = dict(d)
        if "speed_data" in d:
            d["speed_data"] = {Fraction(k): float(v) for k, v in d["speed_data"].items()}
        return cls(**d)


@dataclass
class Infrastructure:
    width: int
    height: int
    cells: dict[Cell, CellType]
    cities: list[City]
    trains: list[TrainSpec]
    infra_id: str = "0"
    seed: int = 0
    params: InfraParams | None = None

    def train(self, train_id: int) -> TrainSpec:
        for t in self.trains:
            if t.train_id == train_id:
                return t
        raise KeyError(train_id)

    def to_dict(self) -> dict:
        return {
            "version": SCHEMA_VERSION,
            "infra_id": self.infra_id,
            "seed": self.seed,
            "width": self.width,
            "height": self.height,
            "params": self.params.to_dict() if self.params else None,
            "cells": [[r, c, ct.kind.value, ct.rotation] for (r, c), ct in sorted(self.cells.items())],
            "cities": [
                {
                    "city_id": c.city_id,
                    "center": list(c.center),
                    "parallel_tracks": c.parallel_tracks,
                    "rotation": c.rotation,
                    "bbox": list(c.bbox),
                    "ports": [[p.cell[0], p.cell[1], p.outward] for p in c.ports],
                    "platforms": [list(p) for p in c.platforms],
                }
                for c in self.cities
            ],
            "trains": [
                {
                    "train_id": t.train_id,
                    "origin": list(t.origin),
                    "heading": t.heading,
                    "target": list(t.target),
                    "speed": str(t.speed),
                    "origin_city": t.origin_city,
                    "target_city": t.target_city,
                }
                for t in self.trains
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Infrastructure":
        if d.get("version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported infrastructure schema version {d.get('version')!r}")
        cells = {(r, c): CellType(Kind(k), rot) for r, c, k, rot in d["cells"]}
        cities = [
            City(
                city_id=c["city_id"],
                center=tuple(c["center"]),
                parallel_tracks=c["parallel_tracks"],
                rotation=c["rotation"],
                bbox=tuple(c["bbox"]),
                ports=tuple(Port((r, cc), o) for r, cc, o in c["ports"]),
                platforms=tuple(tuple(p) for p in c["platforms"]),
            )
            for c in d["cities"]
        ]
        trains = [
            TrainSpec(
                train_id=t["train_id"],
                origin=tuple(t["origin"]),
                heading=t["heading"],
                target=tuple(t["target"]),
                speed=Fraction(t["speed"]),
                origin_city=t["origin_city"],
                target_city=t["target_city"],
            )
            for t in d["trains"]
        ]
        params = InfraParams.from_dict(d["params"]) if d.get("params") else None
        return cls(d["width"], d["height"], cells, cities, trains, d["infra_id"], d["seed"], params)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)


# ---------------------------------------------------------------------------
# Topology graph
# ---------------------------------------------------------------------------


@dataclass
class TopologyGraph:
    succ: dict[Waypoint, tuple[Waypoint, ...]]

    @property
    def nodes(self) -> list[Waypoint]:
        return sorted(self.succ)

    @property
    def edges(self) -> list[tuple[Waypoint, Waypoint]]:
        return [(u, v) for u in sorted(self.succ) for v in self.succ[u]]

    def nodes_at(self, cell: Cell) -> list[Waypoint]:
        return [(cell[0], cell[1], h) for h in range(4) if (cell[0], cell[1], h) in self.succ]

    def reachable(self, source: Waypoint) -> set[Waypoint]:
        seen = {source}
        queue = deque([source])
        while queue:
            u = queue.popleft()
            for v in self.succ.get(u, ()):
                if v not in seen:
                    seen.add(v)
                    queue.append(v)
        return seen


def _accepts(ct: CellType, heading: int) -> bool:
    return any(ct.transitions[heading])


def to_graph(infra: Infrastructure) -> TopologyGraph:
    """Double-point graph: one node per (track cell, accepted incoming heading).

    Moves leaving the grid or into empty cells are dropped; a move into a
    track cell that does not accept the heading raises InconsistentTransitions.
    """
    succ: dict[Waypoint, tuple[Waypoint, ...]] = {}
    for (r, c), ct in sorted(infra.cells.items()):
        m = ct.transitions
        for h_in in range(4):
            if not any(m[h_in]):
                continue
            out = []
            for h_out in range(4):
                if not m[h_in][h_out]:
                    continue
                nr, nc = step((r, c), h_out)
                nb = infra.cells.get((nr, nc))
                if nb is None:
                    continue
                if not _accepts(nb, h_out):
                    raise InconsistentTransitions(
                        f"cell {(r, c)} sends heading {HEADING_NAMES[h_out]} into {(nr, nc)} "
                        f"({nb.kind.value}/{nb.rotation}) which does not accept it"
                    )
                out.append((nr, nc, h_out))
            succ[(r, c, h_in)] = tuple(out)
    return TopologyGraph(succ)


def path_consistency_violations(infra: Infrastructure) -> list[tuple[Cell, int, str]]:
    """Every allowed outgoing move that does not land in an accepting cell."""
    bad = []
    for (r, c), ct in sorted(infra.cells.items()):
        m = ct.transitions
        for h_out in range(4):
            if not any(m[h_in][h_out] for h_in in range(4)):
                continue
            nb_cell = step((r, c), h_out)
            nb = infra.cells.get(nb_cell)
            if nb is None:
                bad.append(((r, c), h_out, "dangling"))
            elif not _accepts(nb, h_out):
                bad.append(((r, c), h_out, "rejected"))
    return bad


# ---------------------------------------------------------------------------
# Generator
# ---------------------------------------------------------------------------


def _footprint_side(tracks: int, platform_length: int) -> int:
    return max(tracks, 2 * tracks + platform_length)


def city_template(tracks: int, platform_length: int):
    """Horizontal city: ``tracks`` parallel rows joined by staggered switch fans.

    Returns (height, width, cell connections, west port, east port, platform cells).
    The east half is the west half rotated by 180 degrees, so only rotations of
    the eight elements are needed.
    """
    p, lp = tracks, platform_length
    width = 2 * p + lp
    conns: dict[Cell, set[Connection]] = {}

    def west_start(r: int) -> int:
        return 0 if r == p - 1 else p - 1 - r

    for r in range(p):
        c0 = west_start(r)
        c1 = width - 1 - west_start(p - 1 - r)
        for c in range(c0, c1 + 1):
            conns[(r, c)] = {_conn(W, E)}
    west_special: dict[Cell, set[Connection]] = {}
    for i in range(p - 1):
        west_special[(p - 1 - i, 1 + i)] = {_conn(W, E), _conn(W, N)}
        west_special[(p - 2 - i, 1 + i)] = {_conn(S, E)}
    for (r, c), cs in west_special.items():
        conns[(r, c)] = set(cs)
        conns[(p - 1 - r, width - 1 - c)] = set(rotate_connections(cs, 2))
    platforms = tuple((r, c) for r in range(p) for c in range(p, p + lp))
    west_port = Port((p - 1, 0), W)
    east_port = Port((0, width - 1), E)
    return p, width, conns, west_port, east_port, platforms


def _rotate_cw(cell: Cell, height: int) -> Cell:
    r, c = cell
    return c, height - 1 - r


def _rotated_template(tracks: int, platform_length: int, rotation: int):
    h, w, conns, wp, ep, plats = city_template(tracks, platform_length)
    ports = [wp, ep]
    for _ in range(rotation % 4):
        conns = {_rotate_cw(cell, h): set(rotate_connections(cs, 1)) for cell, cs in conns.items()}
        ports = [Port(_rotate_cw(p.cell, h), (p.outward + 1) % 4) for p in ports]
        plats = tuple(_rotate_cw(cell, h) for cell in plats)
        h, w = w, h
    return h, w, conns, ports, plats


class _Retry(Exception):
    pass


def _dist(a: Cell, b: Cell) -> float:
    return math.hypot(a[0] - b[0], a[1] - b[1])


def _nearest_neighbour_tour(centers: list[Cell]) -> list[int]:
    order = [0]
    left = set(range(1, len(centers)))
    while left:
        cur = centers[order[-1]]
        nxt = min(left, key=lambda j: (_dist(cur, centers[j]), j))
        order.append(nxt)
        left.remove(nxt)
    return order


class _Canvas:
    """Mutable grid of side connections used while drawing tracks."""

    def __init__(self, height: int, width: int):
        self.height = height
        self.width = width
        self.conns: dict[Cell, set[Connection]] = {}
        self.blocked: set[Cell] = set()

    def inside(self, cell: Cell) -> bool:
        return 0 <= cell[0] < self.height and 0 <= cell[1] < self.width

    def can_enter(self, cell: Cell, h_in: int, h_out: int) -> bool:
        if not self.inside(cell) or cell in self.blocked:
            return False
        existing = self.conns.get(cell)
        if not existing:
            return True
        # only a perpendicular straight crossing of a plain straight cell
        if h_in != h_out or len(existing) != 1:
            return False
        (a, b), = existing
        return a != b and (a + 2) % 4 == b and (a % 2) != (h_in % 2)

    def add(self, cell: Cell, conn: Connection) -> None:
        self.conns.setdefault(cell, set()).add(conn)


def _route_corridor(canvas: _Canvas, start: Port, goal: Port, turn_penalty: int = 3,
                    cross_penalty: int = 4) -> list[tuple[Cell, int, int]] | None:
    """A* from outside ``start`` to outside ``goal`` over (cell, heading) states.

    Returns [(cell, heading in, heading out)] or None. Unobstructed corridors
    come out L-shaped because turns are penalised.
    """
    s_cell, s_head = start.outside, start.outward
    g_cell, g_exit = goal.outside, opposite(goal.outward)

    def h(cell: Cell) -> int:
        return abs(cell[0] - g_cell[0]) + abs(cell[1] - g_cell[1])

    counter = 0
    open_heap = [(h(s_cell), 0, counter, s_cell, s_head)]
    best = {(s_cell, s_head): 0}
    parent: dict[tuple[Cell, int], tuple[Cell, int, int] | None] = {(s_cell, s_head): None}
    while open_heap:
        _, g, _, cell, h_in = heapq.heappop(open_heap)
        if best.get((cell, h_in), math.inf) < g:
            continue
        if cell == g_cell:
            if h_in != opposite(g_exit) and canvas.can_enter(cell, h_in, g_exit):
                path = [(cell, h_in, g_exit)]
                node = (cell, h_in)
                while parent[node] is not None:
                    pc, ph_in, ph_out = parent[node]
                    path.append((pc, ph_in, ph_out))
                    node = (pc, ph_in)
                path.reverse()
                return path
            continue
        for h_out in (h_in, (h_in + 1) % 4, (h_in + 3) % 4):
            if not canvas.can_enter(cell, h_in, h_out):
                continue
            nxt = step(cell, h_out)
            if not canvas.inside(nxt) or nxt in canvas.blocked:
                continue
            cost = g + 1 + (turn_penalty if h_out != h_in else 0)
            if canvas.conns.get(cell):
                cost += cross_penalty
            key = (nxt, h_out)
            if cost < best.get(key, math.inf):
                best[key] = cost
                parent[key] = (cell, h_in, h_out)
                counter += 1
                heapq.heappush(open_heap, (cost + h(nxt), cost, counter, nxt, h_out))
    return None


def _commit_corridor(canvas: _Canvas, path: list[tuple[Cell, int, int]]) -> None:
    for cell, h_in, h_out in path:
        canvas.add(cell, _conn(opposite(h_in), h_out))


def _place_cities(params: InfraParams, rng: random.Random):
    side = _footprint_side(params.max_rail_in_city, params.platform_length) + 2 * params.city_margin
    half = side // 2
    boxes: list[tuple[int, int, int, int]] = []
    placed: list[tuple[Cell, int]] = []
    for _ in range(params.max_num_cities):
        tracks = rng.randint(1, params.max_rail_in_city)
        for _try in range(100):
            r = rng.randint(half, params.height - 1 - (side - 1 - half))
            c = rng.randint(half, params.width - 1 - (side - 1 - half))
            box = (r - half, c - half, r - half + side - 1, c - half + side - 1)
            if all(box[2] < b[0] or b[2] < box[0] or box[3] < b[1] or b[3] < box[1] for b in boxes):
                boxes.append(box)
                placed.append(((r, c), tracks))
                break
    return placed


def _attempt(params: InfraParams, rng: random.Random):
    placed = _place_cities(params, rng)
    if len(placed) < 2:
        raise _Retry("fewer than two cities could be placed")
    centers = [c for c, _ in placed]
    tour = _nearest_neighbour_tour(centers)
    n = len(tour)
    canvas = _Canvas(params.height, params.width)
    cities: list[City] = []
    for pos, idx in enumerate(tour):
        center, tracks = placed[idx]
        prev_c = centers[tour[pos - 1]]
        next_c = centers[tour[(pos + 1) % n]]
        best = None
        for rot in range(4):
            h, w, conns, ports, plats = _rotated_template(tracks, params.platform_length, rot)
            r0, c0 = center[0] - h // 2, center[1] - w // 2
            shifted_in = (ports[0].outside[0] + r0, ports[0].outside[1] + c0)
            shifted_out = (ports[1].outside[0] + r0, ports[1].outside[1] + c0)
            score = _dist(shifted_in, prev_c) + _dist(shifted_out, next_c)
            if best is None or score < best[0] - 1e-9:
                best = (score, rot, h, w, conns, ports, plats, r0, c0)
        _, rot, h, w, conns, ports, plats, r0, c0 = best
        for (r, c), cs in conns.items():
            cell = (r + r0, c + c0)
            if not canvas.inside(cell):
                raise _Retry("city outside grid")
            canvas.conns[cell] = set(cs)
            canvas.blocked.add(cell)
        cities.append(
            City(
                city_id=pos,
                center=center,
                parallel_tracks=tracks,
                rotation=rot,
                bbox=(r0, c0, r0 + h - 1, c0 + w - 1),
                ports=tuple(Port((p.cell[0] + r0, p.cell[1] + c0), p.outward) for p in ports),
                platforms=tuple((r + r0, c + c0) for r, c in plats),
            )
        )
    port_outside = [p.outside for city in cities for p in city.ports]
    for cell in port_outside:
        if not canvas.inside(cell) or cell in canvas.blocked:
            raise _Retry("port opens onto blocked cell")
    # corridors reserve the port stubs of other cities
    for i in range(n):
        a, b = cities[i], cities[(i + 1) % n]
        closing = i == n - 1
        start, goal = a.ports[1], b.ports[0]
        reserved = set(port_outside) - {start.outside, goal.outside}
        canvas.blocked |= reserved
        path = _route_corridor(canvas, start, goal)
        canvas.blocked -= reserved
        if path is None:
            if not closing:
                raise _Retry("corridor could not be routed")
            for port in (start, goal):
                canvas.add(port.outside, _conn(opposite(port.outward), opposite(port.outward)))
            continue
        _commit_corridor(canvas, path)
    cells: dict[Cell, CellType] = {}
    for cell, cs in canvas.conns.items():
        ct = classify(cs)
        if ct is None:
            raise _Retry(f"unclassifiable cell at {cell}: {sorted(cs)}")
        cells[cell] = ct
    return cities, cells


def _place_trains(params: InfraParams, rng: random.Random, cities: list[City],
                  infra: Infrastructure) -> list[TrainSpec]:
    graph = to_graph(infra)
    speeds = sorted(params.speed_data, reverse=True)
    weights = [params.speed_data[s] for s in speeds]
    trains = []
    for tid in range(params.number_of_agents):
        for _try in range(50):
            oc, tc = rng.sample(range(len(cities)), 2)
            origin = rng.choice(cities[oc].platforms)
            target = rng.choice(cities[tc].platforms)
            headings = []
            for hd in range(4):
                wp = (origin[0], origin[1], hd)
                if wp in graph.succ and graph.succ[wp]:
                    reach = graph.reachable(wp)
                    if any(n in reach for n in graph.nodes_at(target)):
                        headings.append(hd)
            if headings:
                hd = rng.choice(headings)
                speed = Fraction(rng.choices(speeds, weights)[0])
                trains.append(TrainSpec(tid, origin, hd, target, speed, oc, tc))
                break
        else:
            raise _Retry(f"no routable origin/target for train {tid}")
    return trains


def generate_infrastructure(params: InfraParams, seed: int, infra_id: str = "0") -> Infrastructure:
    params.validate()
    rng = random.Random(seed)
    last = ""
    for attempt in range(1, params.max_attempts + 1):
        try:
            cities, cells = _attempt(params, rng)
            infra = Infrastructure(params.width, params.height, cells, cities, [], infra_id, seed, params)
            bad = path_consistency_violations(infra)
            if bad:
                raise _Retry(f"path inconsistency at {bad[0]}")
            infra.trains = _place_trains(params, rng, cities, infra)
            return infra
        except _Retry as exc:
            last = str(exc)
    raise GenerationFailed(f"infrastructure generation failed: {last}", params.max_attempts)


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------

_SIDE_POINT = {N: (0.5, 0.0), E: (1.0, 0.5), S: (0.5, 1.0), W: (0.0, 0.5)}


def render_svg(infra: Infrastructure, cell_px: int = 10) -> str:
    """Plain SVG of the track layout, cities, origins (green) and targets (red)."""
    w, h = infra.width * cell_px, infra.height * cell_px
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">',
           f'<rect width="{w}" height="{h}" fill="white"/>']
    for city in infra.cities:
        r0, c0, r1, c1 = city.bbox
        out.append(
            f'<rect x="{c0 * cell_px}" y="{r0 * cell_px}" width="{(c1 - c0 + 1) * cell_px}" '
            f'height="{(r1 - r0 + 1) * cell_px}" fill="#eef" stroke="#99c"/>'
        )
    for (r, c), ct in sorted(infra.cells.items()):
        for a, b in sorted(ct.connections):
            ax, ay = _SIDE_POINT[a]
            x0, y0 = (c + ax) * cell_px, (r + ay) * cell_px
            if a == b:
                xm, ym = (c + 0.5) * cell_px, (r + 0.5) * cell_px
                out.append(f'<line x1="{x0}" y1="{y0}" x2="{xm}" y2="{ym}" stroke="black"/>')
                out.append(f'<circle cx="{xm}" cy="{ym}" r="{cell_px / 5}" fill="black"/>')
                continue
            bx, by = _SIDE_POINT[b]
            x1, y1 = (c + bx) * cell_px, (r + by) * cell_px
            xm, ym = (c + 0.5) * cell_px, (r + 0.5) * cell_px
            out.append(f'<path d="M{x0},{y0} Q{xm},{ym} {x1},{y1}" fill="none" stroke="black"/>')
    for t in infra.trains:
        for cell, colour in ((t.origin, "green"), (t.target, "red")):
            out.append(
                f'<circle cx="{(cell[1] + 0.5) * cell_px}" cy="{(cell[0] + 0.5) * cell_px}" '
                f'r="{cell_px / 3}" fill="{colour}" fill-opacity="0.6"/>'
            )
    out.append("</svg>")
    return "\n".join(out)
