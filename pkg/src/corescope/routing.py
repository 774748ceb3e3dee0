"""Route alternatives per train: k shortest loop-free paths and their union DAG."""
from __future__ import annotations

import heapq
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Iterator

from corescope.errors import NoPath
from corescope.gridgen import Cell, Infrastructure, TopologyGraph, TrainSpec, Waypoint, to_graph

Path = tuple[Waypoint, ...]


def resource_of(wp: Waypoint) -> Cell:
    """One mutually exclusive resource per grid cell, shared by all headings."""
    return wp[0], wp[1]


def _predecessors(succ: dict[Waypoint, tuple[Waypoint, ...]]) -> dict[Waypoint, list[Waypoint]]:
    pred: dict[Waypoint, list[Waypoint]] = {u: [] for u in succ}
    for u, vs in succ.items():
        for v in vs:
            pred.setdefault(v, []).append(u)
    return pred


def _best_path(succ, pred, source: Waypoint, targets: frozenset[Waypoint],
               banned_nodes: set[Waypoint], banned_edges: set[tuple[Waypoint, Waypoint]]) -> Path | None:
    """Minimum path under (hop count, waypoint sequence) ordering, or None."""
    if source in banned_nodes:
        return None
    dist: dict[Waypoint, int] = {}
    queue = deque()
    for t in sorted(targets):
        if t not in banned_nodes:
            dist[t] = 0
            queue.append(t)
    while queue:
        v = queue.popleft()
        if v == source:
            continue
        for u in pred.get(v, ()):
            if u in dist or u in banned_nodes or (u, v) in banned_edges or u in targets:
                continue
            dist[u] = dist[v] + 1
            queue.append(u)
    if source not in dist:
        return None
    path = [source]
    cur = source
    while cur not in targets:
        cur = min(
            v for v in succ.get(cur, ())
            if dist.get(v) == dist[cur] - 1 and (cur, v) not in banned_edges and v not in banned_nodes
        )
        path.append(cur)
    return tuple(path)


def k_shortest_paths(graph: TopologyGraph, source: Waypoint, targets: Iterable[Waypoint], k: int) -> list[Path]:
    """Yen-style k loop-free paths, nondecreasing in hops, ties broken lexicographically.

    A path ends at the first target waypoint it reaches.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    targets = frozenset(targets)
    succ = graph.succ
    pred = _predecessors(succ)
    first = _best_path(succ, pred, source, targets, set(), set())
    if first is None:
        raise NoPath(f"no path from {source} to any of {sorted(targets)}")
    found = [first]
    seen = {first}
    candidates: list[tuple[int, Path]] = []
    while len(found) < k:
        prev = found[-1]
        for i in range(len(prev) - 1):
            root = prev[: i + 1]
            banned_edges = {(p[i], p[i + 1]) for p in found if p[: i + 1] == root}
            banned_nodes = set(root[:-1])
            spur = _best_path(succ, pred, root[-1], targets, banned_nodes, banned_edges)
            if spur is None:
                continue
            total = root[:-1] + spur
            if total not in seen:
                seen.add(total)
                heapq.heappush(candidates, (len(total), total))
        if not candidates:
            break
        _, best = heapq.heappop(candidates)
        found.append(best)
    return found


@dataclass
class RouteDag:
    train_id: int
    source: Waypoint
    sinks: frozenset[Waypoint]
    succ: dict[Waypoint, tuple[Waypoint, ...]]
    duration: int
    paths: list[Path] = field(default_factory=list)

    @property
    def nodes(self) -> list[Waypoint]:
        return sorted(self.succ)

    @property
    def edges(self) -> list[tuple[Waypoint, Waypoint]]:
        return [(u, v) for u in sorted(self.succ) for v in self.succ[u]]

    def topological_order(self) -> list[Waypoint]:
        """Kahn's algorithm with sorted tie-breaking; raises ValueError on a cycle."""
        indeg = {u: 0 for u in self.succ}
        for vs in self.succ.values():
            for v in vs:
                indeg[v] += 1
        ready = [u for u, d in indeg.items() if d == 0]
        heapq.heapify(ready)
        order = []
        while ready:
            u = heapq.heappop(ready)
            order.append(u)
            for v in self.succ[u]:
                indeg[v] -= 1
                if indeg[v] == 0:
                    heapq.heappush(ready, v)
        if len(order) != len(self.succ):
            raise ValueError(f"route graph of train {self.train_id} has a cycle")
        return order

    def iter_paths(self) -> Iterator[Path]:
        """All source-to-sink paths in sorted order."""
        stack: list[tuple[Waypoint, Path]] = [(self.source, (self.source,))]
        out = []
        while stack:
            u, path = stack.pop()
            if u in self.sinks:
                out.append(path)
                continue
            for v in self.succ[u]:
                stack.append((v, path + (v,)))
        yield from sorted(out)

    def to_dict(self) -> dict:
        return {
            "train_id": self.train_id,
            "source": list(self.source),
            "sinks": sorted(list(s) for s in self.sinks),
            "duration": self.duration,
            "edges": [[list(u), list(v)] for u, v in self.edges],
            "nodes": [list(u) for u in self.nodes],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RouteDag":
        succ: dict[Waypoint, list[Waypoint]] = {tuple(u): [] for u in d["nodes"]}
        for u, v in d["edges"]:
            succ[tuple(u)].append(tuple(v))
        return cls(
            d["train_id"], tuple(d["source"]), frozenset(tuple(s) for s in d["sinks"]),
            {u: tuple(vs) for u, vs in succ.items()}, d["duration"],
        )


def dag_from_paths(train_id: int, paths: Iterable[Path], duration: int) -> RouteDag:
    """Union of paths sharing one source; a path that would close a cycle is skipped."""
    paths = list(paths)
    source = paths[0][0]
    kept: list[Path] = []
    succ: dict[Waypoint, set[Waypoint]] = {}
    for path in paths:
        if path[0] != source:
            raise ValueError("all paths must share the source")
        trial = {u: set(vs) for u, vs in succ.items()}
        for u, v in zip(path, path[1:]):
            trial.setdefault(u, set()).add(v)
            trial.setdefault(v, set())
        trial.setdefault(path[0], set())
        dag = RouteDag(train_id, source, frozenset(), {u: tuple(sorted(vs)) for u, vs in trial.items()}, duration)
        try:
            dag.topological_order()
        except ValueError:
            continue
        succ = trial
        kept.append(path)
    sinks = frozenset(p[-1] for p in kept)
    return RouteDag(train_id, source, sinks, {u: tuple(sorted(vs)) for u, vs in succ.items()}, duration, kept)


def route_dag_of(infra: Infrastructure, train: TrainSpec | int, k: int,
                 graph: TopologyGraph | None = None) -> RouteDag:
    if not isinstance(train, TrainSpec):
        train = infra.train(train)
    graph = graph or to_graph(infra)
    targets = graph.nodes_at(train.target)
    paths = k_shortest_paths(graph, train.start, targets, k)
    return dag_from_paths(train.train_id, paths, train.steps_per_cell)
