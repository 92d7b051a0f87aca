"""Network graph, simulated data-plane measurement and link-state snapshots.

A :class:`Topology` is loaded from a small line-oriented text format. Link
state over time is produced by routing synthetic traffic matrices over the
graph, synthesizing the port counters and probe timings a controller would
poll, and feeding those through :func:`measure_link`. Each timestep becomes an
:class:`NliSnapshot` holding raw and min-max normalized n x n matrices.
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
from collections import deque
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

log = logging.getLogger(__name__)

ABSENT = -1.0
METRICS = ("bw", "delay", "loss")


class TopologyError(ValueError):
    """Raised when a topology file cannot be parsed or violates an invariant."""


class MeasurementError(ValueError):
    """Raised for counter samples that cannot define a measurement window."""


@dataclass(frozen=True)
class Link:
    index: int
    u: int
    v: int
    capacity_mbps: float
    base_delay_ms: float


@dataclass(frozen=True)
class Topology:
    n: int
    links: tuple[Link, ...]

    def __post_init__(self):
        _validate(self.n, self.links)

    @property
    def m(self) -> int:
        return len(self.links)

    @property
    def nodes(self) -> list[int]:
        return list(range(self.n))

    @property
    def endpoints(self) -> np.ndarray:
        """(m, 2) int array of link endpoints, row k for edge index k."""
        return np.array([(lk.u, lk.v) for lk in self.links], dtype=np.int64).reshape(-1, 2)

    @property
    def capacity(self) -> np.ndarray:
        return np.array([lk.capacity_mbps for lk in self.links])

    def edge_index(self, i: int, j: int) -> int:
        key = (min(i, j), max(i, j))
        try:
            return self._index_map[key]
        except KeyError:
            raise KeyError(f"no link between {i} and {j}") from None

    @property
    def _index_map(self) -> dict[tuple[int, int], int]:
        cache = self.__dict__.get("_idx")
        if cache is None:
            cache = {(lk.u, lk.v): lk.index for lk in self.links}
            object.__setattr__(self, "_idx", cache)
        return cache

    def neighbors(self, node: int) -> list[int]:
        """Neighbors of ``node`` in ascending id order."""
        adj = self.__dict__.get("_adj")
        if adj is None:
            adj = [[] for _ in range(self.n)]
            for lk in self.links:
                adj[lk.u].append(lk.v)
                adj[lk.v].append(lk.u)
            adj = [sorted(a) for a in adj]
            object.__setattr__(self, "_adj", adj)
        return adj[node]

    def to_text(self) -> str:
        lines = [f"nodes {self.n}"]
        lines += [f"edge {lk.u} {lk.v} {lk.capacity_mbps!r} {lk.base_delay_ms!r}" for lk in self.links]
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        """SHA-256 of the canonical text form; used to bind checkpoints and fixtures."""
        return hashlib.sha256(self.to_text().encode()).hexdigest()


def _validate(n: int, links: Sequence[Link]) -> None:
    if n < 2:
        raise TopologyError("topology needs at least 2 nodes")
    seen = set()
    for k, lk in enumerate(links):
        if lk.index != k:
            raise TopologyError(f"edge indices must be 0..m-1 in order; got {lk.index} at position {k}")
        if lk.u == lk.v:
            raise TopologyError(f"self-loop at node {lk.u}")
        if not (0 <= lk.u < n and 0 <= lk.v < n):
            raise TopologyError(f"edge ({lk.u}, {lk.v}) references a node outside 0..{n - 1}")
        if lk.u > lk.v:
            raise TopologyError(f"edge endpoints must be ordered i < j; got ({lk.u}, {lk.v})")
        if (lk.u, lk.v) in seen:
            raise TopologyError(f"parallel edge ({lk.u}, {lk.v})")
        seen.add((lk.u, lk.v))
        if not lk.capacity_mbps > 0 or not lk.base_delay_ms > 0:
            raise TopologyError(f"edge ({lk.u}, {lk.v}) needs positive capacity and delay")
    adj = [[] for _ in range(n)]
    for lk in links:
        adj[lk.u].append(lk.v)
        adj[lk.v].append(lk.u)
    reached = {0}
    stack = [0]
    while stack:
        for w in adj[stack.pop()]:
            if w not in reached:
                reached.add(w)
                stack.append(w)
    if len(reached) != n:
        raise TopologyError(f"graph is disconnected: {n - len(reached)} node(s) unreachable from node 0")


def parse_topology(text: str) -> Topology:
    n = None
    raw: list[tuple[int, int, float, float]] = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        try:
            if parts[0] == "nodes" and len(parts) == 2:
                if n is not None:
                    raise TopologyError(f"line {lineno}: duplicate 'nodes' header")
                n = int(parts[1])
            elif parts[0] == "edge" and len(parts) == 5:
                raw.append((int(parts[1]), int(parts[2]), float(parts[3]), float(parts[4])))
            else:
                raise TopologyError(f"line {lineno}: expected 'nodes <n>' or 'edge <i> <j> <cap> <delay>'")
        except ValueError as exc:
            if isinstance(exc, TopologyError):
                raise
            raise TopologyError(f"line {lineno}: {exc}") from None
    if n is None:
        raise TopologyError("missing 'nodes <n>' header")
    links = []
    seen = set()
    for k, (i, j, cap, dly) in enumerate(raw):
        key = (min(i, j), max(i, j))
        if key in seen:
            raise TopologyError(f"parallel edge ({i}, {j})")
        seen.add(key)
        links.append(Link(k, key[0], key[1], cap, dly))
    return Topology(n, tuple(links))


def load_topology(path: str | Path) -> Topology:
    return parse_topology(Path(path).read_text())


def default_topology_path() -> Path:
    return Path(str(resources.files("mcast_rl") / "data" / "edge_dc_14.topo"))


def default_topology() -> Topology:
    """The bundled 14-node / 23-link edge data-center topology."""
    return load_topology(default_topology_path())


# --- measurement -----------------------------------------------------------

@dataclass(frozen=True)
class PortCounters:
    """Cumulative counters of one switch port, as returned by a port-stats poll."""
    tx_bytes: float
    rx_bytes: float
    tx_packets: float
    rx_packets: float
    duration_s: float


@dataclass(frozen=True)
class ProbeTimings:
    """Controller probe latencies for one link, in milliseconds."""
    d_lldp1: float
    d_lldp2: float
    d_echo1: float
    d_echo2: float


def measure_link(before: tuple[PortCounters, PortCounters], after: tuple[PortCounters, PortCounters],
                 probes: ProbeTimings, capacity_mbps: float) -> tuple[float, float, float, float]:
    """Turn two counter samples of a link's endpoint ports into link state.

    ``before`` and ``after`` are ``(port_i, port_j)`` pairs polled at two
    instants. Throughput is taken from port i's byte counters; loss compares
    packets sent at one end with packets received at the other.

    Returns:
        ``(bw_u, bw_ij, loss_ij, delay_ij)``: used throughput and residual
        bandwidth in Mbps, loss rate in [0, 1], one-way delay in ms.
    """
    bi, bj = before
    ai, aj = after
    window = ai.duration_s - bi.duration_s
    if not window > 0:
        raise MeasurementError(f"zero-length or negative measurement window ({window} s)")
    for b, a in ((bi, ai), (bj, aj)):
        if a.tx_packets < b.tx_packets or a.rx_packets < b.rx_packets:
            raise MeasurementError("packet counters decreased between samples")

    byte_delta = abs((ai.tx_bytes + ai.rx_bytes) - (bi.tx_bytes + bi.rx_bytes))
    bw_u = byte_delta / window * 8.0 / 1e6
    bw_ij = max(capacity_mbps - bw_u, 0.0)

    tp_i = ai.tx_packets - bi.tx_packets
    rp_j = aj.rx_packets - bj.rx_packets
    tp_j = aj.tx_packets - bj.tx_packets
    rp_i = ai.rx_packets - bi.rx_packets
    # a direction with nothing sent has no measurable loss
    loss_ij_dir = (tp_i - rp_j) / tp_i if tp_i > 0 else 0.0
    loss_ji_dir = (tp_j - rp_i) / tp_j if tp_j > 0 else 0.0
    loss = min(max(loss_ij_dir, loss_ji_dir, 0.0), 1.0)

    delay = max((probes.d_lldp1 + probes.d_lldp2 - probes.d_echo1 - probes.d_echo2) / 2.0, 0.0)
    return bw_u, bw_ij, loss, delay


# --- snapshots --------------------------------------------------------------

@dataclass(frozen=True)
class NliSnapshot:
    """Link state of the whole network at one measurement instant.

    Raw matrices use ``ABSENT`` (-1) where there is no link, including the
    diagonal. Normalized matrices are 0 off-link and on the diagonal.
    """
    timestamp_index: int
    bw: np.ndarray
    delay: np.ndarray
    loss: np.ndarray
    norm_bw: np.ndarray | None = None
    norm_delay: np.ndarray | None = None
    norm_loss: np.ndarray | None = None
    degenerate: tuple[str, ...] = ()
    clamped_links: tuple[int, ...] = ()

    @property
    def n(self) -> int:
        return self.bw.shape[0]

    @property
    def link_mask(self) -> np.ndarray:
        return self.bw >= 0

    @property
    def m(self) -> int:
        return int(np.triu(self.link_mask, 1).sum())

    def raw(self, metric: str) -> np.ndarray:
        return getattr(self, metric)

    def normalized(self, metric: str) -> np.ndarray:
        return getattr(self, "norm_" + metric)

    def edge_values(self, topo: Topology, metric: str, normalized: bool = False) -> np.ndarray:
        """Per-edge values in edge-index order."""
        mat = self.normalized(metric) if normalized else self.raw(metric)
        ep = topo.endpoints
        return mat[ep[:, 0], ep[:, 1]]


def _symmetric(n: int, topo: Topology, values: Iterable[float]) -> np.ndarray:
    mat = np.full((n, n), ABSENT)
    ep = topo.endpoints
    vals = np.asarray(list(values), dtype=float)
    mat[ep[:, 0], ep[:, 1]] = vals
    mat[ep[:, 1], ep[:, 0]] = vals
    return mat


def normalize_nli(snap: NliSnapshot) -> NliSnapshot:
    """Fill the normalized matrices by per-metric min-max scaling over existing links.

    A metric whose values are all equal cannot be scaled; its normalized
    matrix is all zeros and its name is added to ``degenerate``.
    """
    mask = snap.link_mask.copy()
    np.fill_diagonal(mask, False)
    out = {}
    degenerate = []
    for metric in METRICS:
        raw = snap.raw(metric)
        norm = np.zeros_like(raw, dtype=float)
        if mask.any():
            vals = raw[mask]
            lo, hi = vals.min(), vals.max()
            if hi > lo:
                norm[mask] = (vals - lo) / (hi - lo)
            else:
                degenerate.append(metric)
                log.info("snapshot %d: %s has zero range, normalized to 0", snap.timestamp_index, metric)
        out["norm_" + metric] = norm
    return replace(snap, degenerate=tuple(degenerate), **out)


@dataclass(frozen=True)
class SimConfig:
    """Knobs of the synthetic data plane (jitter, loss and delay models)."""
    measure_interval_s: float = 1.0
    bw_jitter: float = 0.02
    delay_jitter: float = 0.05
    loss_kappa: float = 0.1
    loss_knee: float = 0.7
    loss_cap: float = 0.05
    loss_noise: float = 0.005
    delay_load_factor: float = 0.2
    packet_bytes: float = 1000.0

    @classmethod
    def noiseless(cls) -> "SimConfig":
        return cls(bw_jitter=0.0, delay_jitter=0.0, loss_noise=0.0)


def shortest_hop_path(topo: Topology, src: int, dst: int) -> list[int]:
    """Fewest-hop path; among equal-length paths the lexicographically smallest node sequence."""
    dist = [-1] * topo.n
    dist[dst] = 0
    queue = deque([dst])
    while queue:
        x = queue.popleft()
        for y in topo.neighbors(x):
            if dist[y] < 0:
                dist[y] = dist[x] + 1
                queue.append(y)
    path = [src]
    while path[-1] != dst:
        here = path[-1]
        path.append(next(y for y in topo.neighbors(here) if dist[y] == dist[here] - 1))
    return path


def directed_loads(topo: Topology, tm: np.ndarray) -> np.ndarray:
    """Route every demand of ``tm`` (Kbit/s) and return per-edge loads in Mbps.

    Column 0 carries traffic flowing u -> v, column 1 v -> u, for edge (u, v).
    """
    loads = np.zeros((topo.m, 2))
    paths: dict[tuple[int, int], list[int]] = {}
    for i, j in zip(*np.nonzero(tm)):
        if i == j:
            continue
        path = paths.setdefault((i, j), shortest_hop_path(topo, int(i), int(j)))
        for a, b in zip(path, path[1:]):
            k = topo.edge_index(a, b)
            loads[k, 0 if a < b else 1] += tm[i, j] / 1000.0
    return loads


def generate_traffic_matrices(n: int, count: int, seed: int, mean_node_kbps: float = 3000.0,
                              spread: float = 0.6) -> list[np.ndarray]:
    """Seeded gravity-model traffic matrices in Kbit/s.

    Each node gets a fixed sending weight; every matrix perturbs the
    gravity mean of each pair with lognormal noise, so per-node means sit
    near ``mean_node_kbps`` while individual matrices vary.
    """
    rng = np.random.default_rng(seed)
    weight = rng.uniform(0.4, 1.6, n)
    gravity = np.outer(weight, weight)
    np.fill_diagonal(gravity, 0.0)
    gravity *= mean_node_kbps * n / gravity.sum()
    tms = []
    for _ in range(count):
        noise = rng.lognormal(-0.5 * spread ** 2, spread, (n, n))
        tm = np.round(gravity * noise, 3)
        np.fill_diagonal(tm, 0.0)
        tms.append(tm)
    return tms


def generate_snapshots(topo: Topology, tms: Sequence[np.ndarray], seed: int,
                       config: SimConfig = SimConfig()) -> list[NliSnapshot]:
    """Measure the network under each traffic matrix; one snapshot per matrix.

    Every snapshot draws from its own ``(seed, index)`` random stream, so the
    result depends only on the arguments and not on evaluation order.
    """
    if len(tms) == 0:
        raise ValueError("need at least one traffic matrix")
    return [_snapshot(topo, np.asarray(tm, dtype=float), t, seed, config) for t, tm in enumerate(tms)]


def _snapshot(topo: Topology, tm: np.ndarray, t: int, seed: int, cfg: SimConfig) -> NliSnapshot:
    if tm.shape != (topo.n, topo.n):
        raise ValueError(f"traffic matrix {t} has shape {tm.shape}, expected {(topo.n, topo.n)}")
    if (tm < 0).any():
        raise ValueError(f"traffic matrix {t} has negative demand")
    rng = np.random.default_rng([seed, t])
    cap = topo.capacity
    loads = directed_loads(topo, tm)
    total = loads.sum(axis=1)
    over = total > cap
    clamped = tuple(int(k) for k in np.nonzero(over)[0])
    if clamped:
        log.warning("snapshot %d: offered load exceeds capacity on links %s; clamped", t, list(clamped))
        loads[over] *= (cap[over] / total[over])[:, None]
    jitter = 1.0 + rng.uniform(-cfg.bw_jitter, cfg.bw_jitter, topo.m)
    loads = loads * jitter[:, None]
    total = loads.sum(axis=1)
    excess = total > cap
    loads[excess] *= (cap[excess] / total[excess])[:, None]
    util = loads.sum(axis=1) / cap

    base_loss = np.clip(cfg.loss_kappa * np.maximum(0.0, util - cfg.loss_knee), 0.0, cfg.loss_cap)
    dir_loss = base_loss[:, None] + rng.uniform(0.0, cfg.loss_noise, (topo.m, 2))
    true_delay = (np.array([lk.base_delay_ms for lk in topo.links]) * (1.0 + cfg.delay_load_factor * util)
                  * (1.0 + rng.uniform(-cfg.delay_jitter, cfg.delay_jitter, topo.m)))
    echo = rng.uniform(0.2, 2.0, (topo.m, 2))
    asym = rng.uniform(-0.5, 0.5, topo.m)
    offsets = rng.uniform(0.0, 1e9, (topo.m, 4))

    dt = cfg.measure_interval_s
    t0 = 10.0 + t * dt
    bw, delay, loss = [], [], []
    for k, lk in enumerate(topo.links):
        sent_ij = loads[k, 0] * 1e6 / 8.0 * dt
        sent_ji = loads[k, 1] * 1e6 / 8.0 * dt
        pk_ij = sent_ij / cfg.packet_bytes
        pk_ji = sent_ji / cfg.packet_bytes
        ob_i, ob_j, op_i, op_j = offsets[k]
        before = (PortCounters(ob_i, ob_i, op_i, op_i, t0), PortCounters(ob_j, ob_j, op_j, op_j, t0))
        after = (
            PortCounters(ob_i + sent_ij, ob_i + sent_ji * (1 - dir_loss[k, 1]),
                         op_i + pk_ij, op_i + pk_ji * (1 - dir_loss[k, 1]), t0 + dt),
            PortCounters(ob_j + sent_ji, ob_j + sent_ij * (1 - dir_loss[k, 0]),
                         op_j + pk_ji, op_j + pk_ij * (1 - dir_loss[k, 0]), t0 + dt),
        )
        mid = (echo[k, 0] + echo[k, 1]) / 2.0
        probes = ProbeTimings(true_delay[k] + mid + asym[k], true_delay[k] + mid - asym[k], echo[k, 0], echo[k, 1])
        _, bw_ij, loss_ij, delay_ij = measure_link(before, after, probes, lk.capacity_mbps)
        bw.append(bw_ij)
        delay.append(delay_ij)
        loss.append(loss_ij)
    snap = NliSnapshot(
        timestamp_index=t,
        bw=_symmetric(topo.n, topo, bw),
        delay=_symmetric(topo.n, topo, delay),
        loss=_symmetric(topo.n, topo, loss),
        clamped_links=clamped,
    )
    return normalize_nli(snap)


# --- snapshot store ---------------------------------------------------------

def _flat(mat: np.ndarray) -> list[float]:
    return [float(x) for x in mat.ravel()]


def save_snapshots(path: str | Path, snaps: Sequence[NliSnapshot], seed: int) -> None:
    """Write snapshots as JSON lines: a header plus six row-major n x n matrices each."""
    with open(path, "w") as fh:
        for s in snaps:
            rec = {
                "header": {"n": s.n, "m": s.m, "seed": seed, "timestamp_index": s.timestamp_index},
                "bw": _flat(s.bw), "delay": _flat(s.delay), "loss": _flat(s.loss),
                "norm_bw": _flat(s.norm_bw), "norm_delay": _flat(s.norm_delay), "norm_loss": _flat(s.norm_loss),
                "degenerate": list(s.degenerate), "clamped_links": list(s.clamped_links),
            }
            fh.write(json.dumps(rec) + "\n")


def load_snapshots(path: str | Path) -> list[NliSnapshot]:
    snaps = []
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            n = rec["header"]["n"]
            mats = {k: np.array(rec[k], dtype=float).reshape(n, n)
                    for k in ("bw", "delay", "loss", "norm_bw", "norm_delay", "norm_loss")}
            snaps.append(NliSnapshot(timestamp_index=rec["header"]["timestamp_index"],
                                     degenerate=tuple(rec.get("degenerate", ())),
                                     clamped_links=tuple(rec.get("clamped_links", ())), **mats))
    return snaps


def store_seed(path: str | Path) -> int | None:
    with open(path) as fh:
        first = fh.readline()
    return json.loads(first)["header"]["seed"] if first.strip() else None


def export_csv(path: str | Path, snaps: Sequence[NliSnapshot], topo: Topology) -> None:
    """One row per link per snapshot: ``t, i, j, bw, delay, loss``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "i", "j", "bw", "delay", "loss"])
        for s in snaps:
            for lk in topo.links:
                w.writerow([s.timestamp_index, lk.u, lk.v,
                            repr(float(s.bw[lk.u, lk.v])), repr(float(s.delay[lk.u, lk.v])),
                            repr(float(s.loss[lk.u, lk.v]))])
