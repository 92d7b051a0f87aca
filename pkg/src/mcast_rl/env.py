"""Multicast-tree construction as an episodic MDP over edge actions.

The agent starts from the bare source node and picks one link per step.
A link with exactly one endpoint in the tree joins it; any other choice is
a trap that leaves the state untouched. The episode ends when every
destination is in the tree.
"""
from __future__ import annotations

import enum
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .flowtable import build_route_dict, kept_edges, prune_redundant
from .topology import NliSnapshot, Topology

log = logging.getLogger(__name__)

# tree-state channel tags
TAG_SOURCE = -1.0
TAG_DEST = 1.0
TAG_TREE = 1.0
TAG_BRANCH = 0.5


class ActionCase(enum.IntEnum):
    JOINABLE = 1
    LOOP = 2
    IN_TREE = 3
    DETACHED = 4


class EpisodeError(RuntimeError):
    pass


@dataclass(frozen=True)
class MulticastRequest:
    source: int
    destinations: tuple[int, ...]

    def __post_init__(self):
        dests = tuple(sorted(set(self.destinations)))
        if not dests:
            raise ValueError("request needs at least one destination")
        if self.source in dests:
            raise ValueError(f"destination {self.source} equals the source")
        object.__setattr__(self, "destinations", dests)

    @property
    def terminals(self) -> tuple[int, ...]:
        return (self.source, *self.destinations)

    def check(self, n: int) -> None:
        bad = [x for x in self.terminals if not 0 <= x < n]
        if bad:
            raise ValueError(f"unknown node id(s) {bad} for a {n}-node topology")

    @classmethod
    def parse(cls, source: int | str, dests: str | Sequence[int]) -> "MulticastRequest":
        if isinstance(dests, str):
            dests = [int(x) for x in dests.split(",") if x.strip()]
        return cls(int(source), tuple(dests))


@dataclass(frozen=True)
class RewardConfig:
    beta: tuple[float, float, float] = (1 / 3, 1 / 3, 1 / 3)
    r_trap: float = -1.0
    step_scale: float = 0.01
    step_sign: str = "positive"
    finish_scale: float = 1.0

    def __post_init__(self):
        if self.step_sign not in ("positive", "negative"):
            raise ValueError(f"step_sign must be 'positive' or 'negative', got {self.step_sign!r}")
        if any(not 0.0 <= b <= 1.0 for b in self.beta):
            raise ValueError(f"beta weights must lie in [0, 1], got {self.beta}")

    @classmethod
    def from_ratio(cls, ratio: str, **kw) -> "RewardConfig":
        """Build from an ``R_finish:R_step`` label such as ``"1:0.01"`` or ``"1:-0.1"``."""
        finish, step = (float(x) for x in ratio.split(":"))
        return cls(step_scale=abs(step), step_sign="negative" if step < 0 else "positive",
                   finish_scale=finish, **kw)

    @property
    def ratio(self) -> str:
        sign = "-" if self.step_sign == "negative" else ""
        return f"{self.finish_scale:g}:{sign}{self.step_scale:g}"


class PartialTree:
    """Edge set grown from the source; acyclicity is re-checked with a disjoint-set on every insert."""

    def __init__(self, source: int, n: int):
        self.source = source
        self.edges: list[int] = []
        self.nodes: set[int] = {source}
        self.pairs: list[tuple[int, int]] = []
        self._parent = list(range(n))

    def _find(self, x: int) -> int:
        while self._parent[x] != x:
            self._parent[x] = self._parent[self._parent[x]]
            x = self._parent[x]
        return x

    def add(self, edge: int, u: int, v: int) -> None:
        if (u in self.nodes) == (v in self.nodes):
            raise EpisodeError(f"edge {edge} ({u}, {v}) does not have exactly one endpoint in the tree")
        ru, rv = self._find(u), self._find(v)
        if ru == rv:
            raise EpisodeError(f"edge {edge} would create a cycle")
        self._parent[ru] = rv
        parent, child = (u, v) if u in self.nodes else (v, u)
        self.edges.append(edge)
        self.nodes.add(child)
        # (parent, child) in insertion order doubles as the route-dict action list
        self.pairs.append((parent, child))

    def copy(self) -> "PartialTree":
        t = PartialTree(self.source, len(self._parent))
        t.edges = list(self.edges)
        t.nodes = set(self.nodes)
        t.pairs = list(self.pairs)
        t._parent = list(self._parent)
        return t

    def spans(self, nodes: Sequence[int]) -> bool:
        return all(x in self.nodes for x in nodes)

    @classmethod
    def from_edges(cls, topo: Topology, source: int, edges: Sequence[int]) -> "PartialTree":
        """Rebuild a tree from an unordered edge set by growing it outward from the source."""
        tree = cls(source, topo.n)
        pending = list(edges)
        ep = topo.endpoints
        while pending:
            for e in pending:
                u, v = (int(x) for x in ep[e])
                if (u in tree.nodes) != (v in tree.nodes):
                    tree.add(e, u, v)
                    pending.remove(e)
                    break
            else:
                raise EpisodeError(f"edges {pending} are not connected to a tree rooted at {source}")
        return tree


def classify_action(topo: Topology, tree: PartialTree, edge: int) -> ActionCase:
    if edge in tree.edges:
        return ActionCase.IN_TREE
    lk = topo.links[edge]
    inside = (lk.u in tree.nodes) + (lk.v in tree.nodes)
    if inside == 2:
        return ActionCase.LOOP
    if inside == 1:
        return ActionCase.JOINABLE
    return ActionCase.DETACHED


def reward_step(topo: Topology, edge: int, snap: NliSnapshot, cfg: RewardConfig) -> float:
    """Link-level reward on normalized metrics, before ``step_scale`` is applied."""
    lk = topo.links[edge]
    bw = snap.norm_bw[lk.u, lk.v]
    delay = snap.norm_delay[lk.u, lk.v]
    loss = snap.norm_loss[lk.u, lk.v]
    b1, b2, b3 = cfg.beta
    if cfg.step_sign == "negative":
        return float(-(b1 * (1 - bw) + b2 * delay + b3 * loss))
    return float(b1 * bw + b2 * (1 - delay) + b3 * (1 - loss))


@dataclass(frozen=True)
class TreeMetrics:
    bw_tree: float
    delay_tree: float
    loss_tree: float
    length: int
    redundancy: int


def _paths_to_source(topo: Topology, source: int, edges: Sequence[int]) -> dict[int, tuple[int | None, int | None]]:
    """BFS parent map over the tree: node -> (parent, edge to parent)."""
    adj: dict[int, list[tuple[int, int]]] = {}
    for e in edges:
        lk = topo.links[e]
        adj.setdefault(lk.u, []).append((lk.v, e))
        adj.setdefault(lk.v, []).append((lk.u, e))
    parent: dict[int, tuple[int | None, int | None]] = {source: (None, None)}
    stack = [source]
    while stack:
        x = stack.pop()
        for y, e in adj.get(x, ()):
            if y not in parent:
                parent[y] = (x, e)
                stack.append(y)
    return parent


def bottleneck_bw(topo: Topology, source: int, destinations: Sequence[int], edges: Sequence[int],
                  snap: NliSnapshot) -> float:
    parent = _paths_to_source(topo, source, edges)
    bw = snap.edge_values(topo, "bw")
    total = 0.0
    for d in destinations:
        if d not in parent:
            raise EpisodeError(f"destination {d} is not reached by the tree")
        worst = math.inf
        node = d
        while parent[node][0] is not None:
            node, e = parent[node]
            worst = min(worst, bw[e])
        total += worst
    return total / len(destinations)


def redundant_edges(topo: Topology, req: MulticastRequest, tree: PartialTree) -> list[int]:
    """Tree edges dropped by the reverse-traversal prune."""
    route = build_route_dict(tree.pairs, req.source)
    keep = kept_edges(prune_redundant(route, req.destinations))
    return [e for e in tree.edges if (topo.links[e].u, topo.links[e].v) not in keep]


def tree_metrics(topo: Topology, req: MulticastRequest, tree: PartialTree, snap: NliSnapshot) -> TreeMetrics:
    if not tree.spans(req.terminals):
        raise EpisodeError("tree does not reach every destination")
    delay = snap.edge_values(topo, "delay")[tree.edges]
    loss = snap.edge_values(topo, "loss")[tree.edges]
    return TreeMetrics(
        bw_tree=bottleneck_bw(topo, req.source, req.destinations, tree.edges, snap),
        delay_tree=float(delay.sum()),
        loss_tree=float(1.0 - np.prod(1.0 - loss)),
        length=len(tree.edges),
        redundancy=len(redundant_edges(topo, req, tree)),
    )


def scaled_tree_terms(topo: Topology, req: MulticastRequest, metrics: TreeMetrics,
                      snap: NliSnapshot) -> tuple[float, float]:
    """Bandwidth and delay of a whole tree rescaled against the snapshot's link ranges.

    Zero-width ranges give 0. Both results are clipped to [0, 1]: a tree of
    |S| - 1 near-minimum-delay links can otherwise push the delay term
    slightly below 0.
    """
    bw = snap.edge_values(topo, "bw")
    delay = snap.edge_values(topo, "delay")
    lo, hi = bw.min(), bw.max()
    if hi > lo:
        bw_hat = (metrics.bw_tree - lo) / (hi - lo)
    else:
        log.debug("degenerate bandwidth range in snapshot %d", snap.timestamp_index)
        bw_hat = 0.0
    floor = delay.min() * len(req.terminals)
    span = delay.sum() - floor
    if span > 0:
        delay_hat = (metrics.delay_tree - floor) / span
    else:
        log.debug("degenerate delay range in snapshot %d", snap.timestamp_index)
        delay_hat = 0.0
    return float(np.clip(bw_hat, 0.0, 1.0)), float(np.clip(delay_hat, 0.0, 1.0))


def reward_finish(topo: Topology, req: MulticastRequest, tree: PartialTree, snap: NliSnapshot,
                  cfg: RewardConfig) -> float:
    """Whole-tree reward, before ``finish_scale``."""
    metrics = tree_metrics(topo, req, tree, snap)
    return finish_from_metrics(topo, req, metrics, snap, cfg)


def finish_from_metrics(topo: Topology, req: MulticastRequest, metrics: TreeMetrics, snap: NliSnapshot,
                        cfg: RewardConfig) -> float:
    bw_hat, delay_hat = scaled_tree_terms(topo, req, metrics, snap)
    b1, b2, b3 = cfg.beta
    return float(b1 * bw_hat + b2 * (1 - delay_hat) + b3 * (1 - metrics.loss_tree))


def tree_state_matrix(topo: Topology, req: MulticastRequest, tree: PartialTree) -> np.ndarray:
    """The n x n tree-state channel: terminal tags on the diagonal, tree and candidate edges off it."""
    mt = np.zeros((topo.n, topo.n), dtype=np.float32)
    ep = topo.endpoints
    in_tree = np.zeros(topo.n, dtype=bool)
    in_tree[list(tree.nodes)] = True
    u, v = ep[:, 0], ep[:, 1]
    branch = in_tree[u] ^ in_tree[v]
    mt[u[branch], v[branch]] = TAG_BRANCH
    mt[v[branch], u[branch]] = TAG_BRANCH
    if tree.edges:
        te = ep[tree.edges]
        mt[te[:, 0], te[:, 1]] = TAG_TREE
        mt[te[:, 1], te[:, 0]] = TAG_TREE
    for d in req.destinations:
        mt[d, d] = TAG_DEST
    mt[req.source, req.source] = TAG_SOURCE
    return mt


class StepResult(NamedTuple):
    state: np.ndarray | None
    reward: float
    done: bool
    case: ActionCase
    truncated: bool


class MulticastEnv:
    """Single multicast request over one snapshot at a time.

    ``max_invalid`` bounds trap actions per episode (default ``50 * m``);
    exceeding it ends the episode as truncated.
    """

    def __init__(self, topo: Topology, reward: RewardConfig = RewardConfig(), max_invalid: int | None = None,
                 record_trace: bool = False):
        self.topo = topo
        self.reward_cfg = reward
        self.max_invalid = 50 * topo.m if max_invalid is None else max_invalid
        self.record_trace = record_trace
        self.trace: list[dict] = []
        self._ep = topo.endpoints
        self._base = None
        self.tree: PartialTree | None = None
        self.done = True

    def reset(self, req: MulticastRequest, snap: NliSnapshot) -> np.ndarray:
        req.check(self.topo.n)
        if snap.n != self.topo.n:
            raise ValueError(f"snapshot is {snap.n} x {snap.n}, topology has {self.topo.n} nodes")
        self.req = req
        self.snap = snap
        self.tree = PartialTree(req.source, self.topo.n)
        self.done = False
        self.truncated = False
        self.invalid = 0
        self.t = 0
        self.trace = []
        n = self.topo.n
        self._base = np.zeros((4, n, n), dtype=np.float32)
        self._base[1] = snap.norm_bw
        self._base[2] = snap.norm_delay
        self._base[3] = snap.norm_loss
        self._state = self._encode()
        return self._state.copy()

    def _encode(self) -> np.ndarray:
        state = self._base.copy()
        state[0] = tree_state_matrix(self.topo, self.req, self.tree)
        return state

    @property
    def state(self) -> np.ndarray:
        return self._state.copy()

    def joinable_mask(self) -> np.ndarray:
        in_tree = np.zeros(self.topo.n, dtype=bool)
        in_tree[list(self.tree.nodes)] = True
        return in_tree[self._ep[:, 0]] ^ in_tree[self._ep[:, 1]]

    def step(self, edge: int) -> StepResult:
        if self.done:
            raise EpisodeError("episode is over; call reset()")
        if not 0 <= edge < self.topo.m:
            raise IndexError(f"edge index {edge} outside 0..{self.topo.m - 1}")
        case = classify_action(self.topo, self.tree, edge)
        truncated = False
        if case is ActionCase.JOINABLE:
            lk = self.topo.links[edge]
            self.tree.add(edge, lk.u, lk.v)
            if self.tree.spans(self.req.destinations):
                self.done = True
                reward = self.reward_cfg.finish_scale * reward_finish(
                    self.topo, self.req, self.tree, self.snap, self.reward_cfg)
                next_state = None
            else:
                reward = self.reward_cfg.step_scale * reward_step(self.topo, edge, self.snap, self.reward_cfg)
                self._state = self._encode()
                next_state = self._state.copy()
        else:
            self.invalid += 1
            reward = self.reward_cfg.r_trap
            if self.invalid > self.max_invalid:
                self.done = truncated = self.truncated = True
            next_state = self._state.copy()
        self.t += 1
        if self.record_trace:
            self.trace.append({"t": self.t, "action_edge": int(edge), "case": case.name, "reward": reward,
                               "tree_edges": list(self.tree.edges), "done": self.done})
        return StepResult(next_state, float(reward), self.done, case, truncated)

    def export_trace(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            for rec in self.trace:
                fh.write(json.dumps(rec) + "\n")
