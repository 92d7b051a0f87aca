"""Redundant-branch pruning and multicast flow-entry generation.

The agent's tree is recorded as a route dictionary (child -> parent). Walking
parent chains backwards from each destination visits exactly the nodes that
carry multicast traffic; everything else is a redundant branch. The walk
produces per-node parent/children records, which become one flow entry per
switch with a multi-port output at fork nodes.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

HOST_PORT = 0


class RouteError(ValueError):
    pass


@dataclass
class NodeInfo:
    parent: int | None
    children: list[int]


@dataclass(frozen=True)
class FlowEntry:
    switch: int
    group: int
    in_port: int | None
    out_ports: tuple[int, ...]

    def __post_init__(self):
        if not self.out_ports:
            raise ValueError(f"flow entry on switch {self.switch} has no output port")
        if len(set(self.out_ports)) != len(self.out_ports) or self.in_port in self.out_ports:
            raise ValueError(f"flow entry on switch {self.switch}: out_ports must be distinct and exclude in_port")

    def to_dict(self) -> dict:
        return {"switch": self.switch, "group": self.group, "in_port": self.in_port, "out_ports": list(self.out_ports)}


def build_route_dict(actions: Iterable[tuple[int, int]], source: int) -> dict[int, int | None]:
    """Record, for every link the agent added, which endpoint was already in the tree.

    ``actions`` are the ``(u, v)`` endpoints of each successfully added edge,
    in the order they were added.
    """
    route: dict[int, int | None] = {source: None}
    for u, v in actions:
        if u in route and v not in route:
            route[v] = u
        elif v in route and u not in route:
            route[u] = v
        elif u in route:
            raise RouteError(f"edge ({u}, {v}) would close a loop in the tree")
        else:
            raise RouteError(f"edge ({u}, {v}) is not adjacent to the tree")
    return route


def prune_redundant(route: Mapping[int, int | None], destinations: Iterable[int]) -> dict[int, NodeInfo]:
    """Keep only nodes on some source -> destination path.

    Walks up from each destination (ascending id) until reaching a node
    that an earlier walk already covered. Children are listed in the order
    they were first reached.
    """
    source = next((k for k, p in route.items() if p is None), None)
    if source is None:
        raise RouteError("route has no root")
    info: dict[int, NodeInfo] = {source: NodeInfo(None, [])}
    covered = {source}
    for d in sorted(set(destinations)):
        if d not in route:
            raise RouteError(f"destination {d} is not in the route")
        path = [d]
        while path[-1] not in covered:
            parent = route.get(path[-1])
            if parent is None or parent in path:
                raise RouteError(f"route parents from {d} contain a cycle or never reach the source")
            path.append(parent)
        for node, parent in zip(path, path[1:]):
            info.setdefault(node, NodeInfo(parent, [])).parent = parent
            covered.add(node)
        for node, parent in reversed(list(zip(path, path[1:]))):
            kids = info.setdefault(parent, NodeInfo(None, [])).children
            if node not in kids:
                kids.append(node)
    return info


def kept_edges(info: Mapping[int, NodeInfo]) -> set[tuple[int, int]]:
    return {(min(k, v.parent), max(k, v.parent)) for k, v in info.items() if v.parent is not None}


def port_map(neighbors: Mapping[int, Sequence[int]]) -> dict[tuple[int, int], int]:
    """Synthetic ports: port k on a node faces its k-th neighbor by id; port 0 is the host."""
    ports = {}
    for node, nbrs in neighbors.items():
        for k, w in enumerate(sorted(nbrs), 1):
            ports[(node, w)] = k
    return ports


def emit_flow_entries(info: Mapping[int, NodeInfo], ports: Mapping[tuple[int, int], int], group: int,
                      destinations: Iterable[int]) -> list[FlowEntry]:
    """One flow entry per tree node; destinations also deliver to their host port."""
    dests = set(destinations)
    entries = []
    for node in sorted(info):
        rec = info[node]
        try:
            in_port = None if rec.parent is None else ports[(node, rec.parent)]
            out = [ports[(node, c)] for c in rec.children]
        except KeyError as exc:
            raise RouteError(f"no port assigned for link {exc.args[0]}") from None
        if node in dests:
            out.append(HOST_PORT)
        if out:
            entries.append(FlowEntry(node, group, in_port, tuple(out)))
    return entries


def replay_reachability(entries: Sequence[FlowEntry], ports: Mapping[tuple[int, int], int],
                        source: int) -> set[int]:
    """Forward a packet from ``source`` through the table; return the switches that hand it to their host."""
    peer = {(node, p): w for (node, w), p in ports.items()}
    table = {e.switch: e for e in entries}
    delivered: set[int] = set()
    seen = set()
    frontier = [(source, None)]
    while frontier:
        node, in_port = frontier.pop()
        if node in seen or node not in table:
            continue
        entry = table[node]
        if entry.in_port != in_port:
            continue
        seen.add(node)
        for p in entry.out_ports:
            if p == HOST_PORT:
                delivered.add(node)
            else:
                nxt = peer[(node, p)]
                frontier.append((nxt, ports[(nxt, node)]))
    return delivered


def dumps_entries(entries: Sequence[FlowEntry]) -> str:
    return json.dumps([e.to_dict() for e in entries], indent=2)


def loads_entries(text: str) -> list[FlowEntry]:
    return [FlowEntry(d["switch"], d["group"], d["in_port"], tuple(d["out_ports"])) for d in json.loads(text)]
