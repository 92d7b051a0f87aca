"""Reference tree builders: the KMB heuristic under three link weightings and an exhaustive oracle.

The oracle enumerates every minimal Steiner tree for a request (every leaf
is a terminal), caches the catalog per topology and request, then scores the
whole catalog against a snapshot in a few vectorized numpy passes.
"""
from __future__ import annotations

import enum
import heapq
import json
import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Sequence

import numpy as np

from .env import MulticastRequest, PartialTree, RewardConfig
from .topology import NliSnapshot, Topology

BW_EPSILON = 1e-6
MAX_ORACLE_LINKS = 25


class WeightRegime(str, enum.Enum):
    BANDWIDTH = "bw"
    DELAY = "delay"
    LOSS = "loss"


class UnreachableTerminal(ValueError):
    pass


class OracleRefused(ValueError):
    pass


def weight_cost(regime: WeightRegime | str, values: Sequence[float] | np.ndarray) -> np.ndarray:
    """Nonnegative additive link costs from one metric vector over all links.

    Bandwidth costs are measured down from the largest bandwidth in ``values``,
    so the best link costs ``BW_EPSILON``. Loss costs are ``-ln(1 - loss)``,
    which sums along a path to the path's end-to-end loss; a loss of 1 costs
    infinity and the link is unusable.
    """
    regime = WeightRegime(regime)
    v = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(v)):
        raise ValueError("link metrics must be finite")
    if regime is WeightRegime.DELAY:
        return v.copy()
    if regime is WeightRegime.LOSS:
        with np.errstate(divide="ignore"):
            return -np.log1p(-np.clip(v, 0.0, 1.0))
    return (v.max() - v) + BW_EPSILON


def _adjacency(topo: Topology, costs: np.ndarray) -> list[list[tuple[int, int]]]:
    adj: list[list[tuple[int, int]]] = [[] for _ in range(topo.n)]
    for lk in topo.links:
        if math.isfinite(costs[lk.index]):
            adj[lk.u].append((lk.v, lk.index))
            adj[lk.v].append((lk.u, lk.index))
    return adj


def shortest_paths(topo: Topology, costs: np.ndarray, src: int) -> dict[int, tuple[float, tuple[int, ...]]]:
    """Uniform-cost search; among equal-cost paths the lexicographically smallest node sequence wins."""
    adj = _adjacency(topo, costs)
    best: dict[int, tuple[float, tuple[int, ...]]] = {src: (0.0, (src,))}
    heap = [(0.0, (src,))]
    done: set[int] = set()
    while heap:
        d, path = heapq.heappop(heap)
        u = path[-1]
        if u in done:
            continue
        done.add(u)
        for v, e in adj[u]:
            if v in done:
                continue
            cand = (d + float(costs[e]), path + (v,))
            if v not in best or cand < best[v]:
                best[v] = cand
                heapq.heappush(heap, cand)
    return best


class _DisjointSet:
    def __init__(self, items):
        self.parent = {x: x for x in items}

    def find(self, x):
        while self.parent[x] != x:
            self.parent[x] = self.parent[self.parent[x]]
            x = self.parent[x]
        return x

    def union(self, a, b) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        self.parent[ra] = rb
        return True


def _kruskal(nodes, weighted_edges):
    """``weighted_edges`` are (weight, tiebreak, a, b, payload); returns chosen payloads."""
    dsu = _DisjointSet(nodes)
    return [payload for _, _, a, b, payload in sorted(weighted_edges) if dsu.union(a, b)]


def kmb_edges(topo: Topology, costs: np.ndarray, terminals: Sequence[int]) -> list[int]:
    terminals = sorted(set(terminals))
    paths = {t: shortest_paths(topo, costs, t) for t in terminals}
    closure = []
    for i, a in enumerate(terminals):
        for b in terminals[i + 1:]:
            if b not in paths[a]:
                raise UnreachableTerminal(f"terminal {b} cannot be reached from {a}")
            d, path = paths[a][b]
            closure.append((d, (a, b), a, b, path))
    expanded: set[int] = set()
    for path in _kruskal(terminals, closure):
        for x, y in zip(path, path[1:]):
            expanded.add(topo.edge_index(x, y))
    sub_nodes = {int(x) for e in expanded for x in topo.endpoints[e]} | set(terminals)
    tree = set(_kruskal(sub_nodes, [(float(costs[e]), e, topo.links[e].u, topo.links[e].v, e) for e in expanded]))
    return sorted(_strip_leaves(topo, tree, set(terminals)))


def _strip_leaves(topo: Topology, edges: set[int], keep: set[int]) -> set[int]:
    edges = set(edges)
    while True:
        degree: dict[int, list[int]] = {}
        for e in edges:
            for x in topo.endpoints[e]:
                degree.setdefault(int(x), []).append(e)
        leaves = [inc[0] for node, inc in degree.items() if len(inc) == 1 and node not in keep]
        if not leaves:
            return edges
        edges.difference_update(leaves)


def kmb(topo: Topology, snap: NliSnapshot, regime: WeightRegime | str, req: MulticastRequest) -> PartialTree:
    costs = weight_cost(regime, snap.edge_values(topo, WeightRegime(regime).value))
    if len(req.terminals) == 1:
        return PartialTree(req.source, topo.n)
    return PartialTree.from_edges(topo, req.source, kmb_edges(topo, costs, req.terminals))


def enumerate_steiner_trees(topo: Topology, terminals: Sequence[int], root: int | None = None) -> list[tuple[int, ...]]:
    """All trees containing every terminal whose leaves are all terminals, as sorted edge tuples.

    Grows subtrees from ``root`` by branching on the lowest-index frontier
    edge (take it or forbid it). A branch dies once a terminal can no longer
    be reached through allowed edges, or once a non-terminal leaf has no
    allowed edge left to grow through.
    """
    terminals = frozenset(terminals)
    root = min(terminals) if root is None else root
    ep = [(lk.u, lk.v) for lk in topo.links]
    incident = [[] for _ in range(topo.n)]
    for lk in topo.links:
        incident[lk.u].append(lk.index)
        incident[lk.v].append(lk.index)
    out: list[tuple[int, ...]] = []

    def reachable(in_tree: set[int], banned: set[int]) -> set[int]:
        seen = set(in_tree)
        stack = list(in_tree)
        while stack:
            x = stack.pop()
            for e in incident[x]:
                if e in banned:
                    continue
                u, v = ep[e]
                y = v if u == x else u
                if y not in seen:
                    seen.add(y)
                    stack.append(y)
        return seen

    def open_edges(x: int, nodes: set[int], banned: set[int]) -> bool:
        for e in incident[x]:
            if e in banned:
                continue
            u, v = ep[e]
            if (v if u == x else u) not in nodes:
                return True
        return False

    def dead(nodes: set[int], degree: dict[int, int], banned: set[int]) -> bool:
        if not terminals <= reachable(nodes, banned):
            return True
        return any(degree.get(x, 0) == 1 and x not in terminals and not open_edges(x, nodes, banned) for x in nodes)

    def grow(edges: list[int], nodes: set[int], degree: dict[int, int], banned: set[int]) -> None:
        if dead(nodes, degree, banned):
            return
        frontier = None
        for x in sorted(nodes):
            for e in incident[x]:
                if e in banned:
                    continue
                u, v = ep[e]
                if (u in nodes) != (v in nodes) and (frontier is None or e < frontier):
                    frontier = e
        if frontier is None:
            if terminals <= nodes and all(degree.get(x, 0) != 1 or x in terminals for x in nodes):
                out.append(tuple(sorted(edges)))
            return
        u, v = ep[frontier]
        new = v if u in nodes else u
        degree[u] = degree.get(u, 0) + 1
        degree[v] = degree.get(v, 0) + 1
        nodes.add(new)
        edges.append(frontier)
        grow(edges, nodes, degree, banned)
        edges.pop()
        nodes.discard(new)
        degree[u] -= 1
        degree[v] -= 1
        banned.add(frontier)
        grow(edges, nodes, degree, banned)
        banned.discard(frontier)

    grow([], {root}, {}, set())
    return sorted(set(out))


class TreeCatalog:
    """Every minimal Steiner tree for one request, with per-destination path masks."""

    def __init__(self, topo: Topology, req: MulticastRequest):
        self.topo = topo
        self.req = req
        self.trees = enumerate_steiner_trees(topo, req.terminals, root=req.source)
        if not self.trees:
            raise UnreachableTerminal(f"no tree connects {req.terminals}")
        k, m, dests = len(self.trees), topo.m, req.destinations
        self.edge_mask = np.zeros((k, m), dtype=bool)
        self.path_mask = np.zeros((k, len(dests), m), dtype=bool)
        for i, tree in enumerate(self.trees):
            self.edge_mask[i, list(tree)] = True
            parent = _tree_parents(topo, req.source, tree)
            for j, d in enumerate(dests):
                node = d
                while parent[node] is not None:
                    node, e = parent[node]
                    self.path_mask[i, j, e] = True
        self.length = self.edge_mask.sum(axis=1)

    def __len__(self) -> int:
        return len(self.trees)

    def metrics(self, snap: NliSnapshot) -> dict[str, np.ndarray]:
        bw = snap.edge_values(self.topo, "bw")
        delay = snap.edge_values(self.topo, "delay")
        loss = snap.edge_values(self.topo, "loss")
        path_bw = np.where(self.path_mask, bw, np.inf).min(axis=2)
        survive = np.where(self.edge_mask, 1.0 - loss, 1.0).prod(axis=1)
        return {
            "bw": path_bw.mean(axis=1),
            "delay": np.where(self.edge_mask, delay, 0.0).sum(axis=1),
            "loss": 1.0 - survive,
            "bottleneck": np.where(self.edge_mask, bw, np.inf).min(axis=1),
        }

    def r_finish(self, snap: NliSnapshot, reward: RewardConfig) -> np.ndarray:
        mt = self.metrics(snap)
        bw = snap.edge_values(self.topo, "bw")
        delay = snap.edge_values(self.topo, "delay")
        lo, hi = bw.min(), bw.max()
        bw_hat = (mt["bw"] - lo) / (hi - lo) if hi > lo else np.zeros(len(self))
        floor = delay.min() * len(self.req.terminals)
        span = delay.sum() - floor
        delay_hat = (mt["delay"] - floor) / span if span > 0 else np.zeros(len(self))
        b1, b2, b3 = reward.beta
        return (b1 * np.clip(bw_hat, 0, 1) + b2 * (1 - np.clip(delay_hat, 0, 1)) + b3 * (1 - mt["loss"]))

    def additive_cost(self, costs: np.ndarray) -> np.ndarray:
        with np.errstate(invalid="ignore"):
            return np.where(self.edge_mask, costs, 0.0).sum(axis=1)


def _tree_parents(topo: Topology, source: int, edges: Sequence[int]) -> dict[int, tuple[int, int] | None]:
    adj: dict[int, list[tuple[int, int]]] = {}
    for e in edges:
        lk = topo.links[e]
        adj.setdefault(lk.u, []).append((lk.v, e))
        adj.setdefault(lk.v, []).append((lk.u, e))
    parent: dict[int, tuple[int, int] | None] = {source: None}
    stack = [source]
    while stack:
        x = stack.pop()
        for y, e in adj.get(x, ()):
            if y not in parent:
                parent[y] = (x, e)
                stack.append(y)
    return parent


@lru_cache(maxsize=32)
def tree_catalog(topo: Topology, req: MulticastRequest) -> TreeCatalog:
    return TreeCatalog(topo, req)


MAXIMIZE = {"r_finish": True, "bw": True, "bottleneck": True, "delay": False, "loss": False}
OBJECTIVES = tuple(MAXIMIZE) + tuple(f"cost:{r.value}" for r in WeightRegime)


@dataclass(frozen=True)
class OracleResult:
    tree: PartialTree
    value: float
    edges: tuple[int, ...]
    objective: str
    candidates: int


def pick_best(values: np.ndarray, trees: Sequence[tuple[int, ...]], maximize: bool) -> int:
    """Index of the optimum; near-ties (1e-12 relative) go to fewer edges, then the smaller edge tuple."""
    signed = values if maximize else -values
    top = np.nanmax(signed)
    tol = 1e-12 * max(1.0, abs(top))
    tied = np.flatnonzero(signed >= top - tol)
    return int(min(tied, key=lambda i: (len(trees[i]), trees[i])))


def exact_steiner_oracle(topo: Topology, snap: NliSnapshot, req: MulticastRequest, objective: str = "r_finish",
                         reward: RewardConfig = RewardConfig(), max_links: int = MAX_ORACLE_LINKS) -> OracleResult:
    """Optimal minimal Steiner tree under ``objective``.

    Objectives: ``r_finish`` (maximized with ``reward``'s weights), ``bw``,
    ``bottleneck`` (maximized), ``delay``, ``loss`` (minimized) and
    ``cost:<regime>`` (summed ``weight_cost``, minimized).
    """
    if topo.m > max_links:
        raise OracleRefused(f"exhaustive search refused: {topo.m} links exceeds the limit of {max_links}")
    if objective not in OBJECTIVES:
        raise ValueError(f"unknown objective {objective!r}; choose from {OBJECTIVES}")
    req.check(topo.n)
    cat = tree_catalog(topo, req)
    if objective == "r_finish":
        values, maximize = cat.r_finish(snap, reward), True
    elif objective.startswith("cost:"):
        regime = WeightRegime(objective.split(":", 1)[1])
        values = cat.additive_cost(weight_cost(regime, snap.edge_values(topo, regime.value)))
        maximize = False
    else:
        values, maximize = cat.metrics(snap)[objective], MAXIMIZE[objective]
    i = pick_best(values, cat.trees, maximize)
    edges = cat.trees[i]
    return OracleResult(PartialTree.from_edges(topo, req.source, edges), float(values[i]), edges, objective, len(cat))


def min_cost_steiner(topo: Topology, costs: np.ndarray, terminals: Sequence[int]) -> tuple[float, tuple[int, ...]]:
    """Exact minimum additive-cost Steiner tree for arbitrary per-link costs."""
    trees = enumerate_steiner_trees(topo, terminals)
    if not trees:
        raise UnreachableTerminal(f"no tree connects {sorted(terminals)}")
    mask = np.zeros((len(trees), topo.m), dtype=bool)
    for i, t in enumerate(trees):
        mask[i, list(t)] = True
    values = np.where(mask, costs, 0.0).sum(axis=1)
    i = pick_best(values, trees, maximize=False)
    return float(values[i]), trees[i]


def oracle_fixture(topo: Topology, snap: NliSnapshot, req: MulticastRequest, result: OracleResult) -> dict:
    return {
        "topology_hash": topo.digest(),
        "snapshot_index": snap.timestamp_index,
        "request": {"source": req.source, "destinations": list(req.destinations)},
        "objective": result.objective,
        "best_value": result.value,
        "best_edges": list(result.edges),
    }


def write_fixtures(path: str | Path, fixtures: Sequence[dict]) -> None:
    Path(path).write_text(json.dumps(list(fixtures), indent=2) + "\n")


def read_fixtures(path: str | Path) -> list[dict]:
    return json.loads(Path(path).read_text())
