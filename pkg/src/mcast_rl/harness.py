"""Experiment plumbing behind the command line: simulate, train, evaluate, install, timing, oracle."""
from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .agent import (RolloutResult, TrainConfig, greedy_rollout, load_checkpoint, save_checkpoint, train,
                    write_log_csv)
from .baselines import WeightRegime, exact_steiner_oracle, kmb, oracle_fixture, write_fixtures
from .env import MulticastRequest, PartialTree, RewardConfig, finish_from_metrics, redundant_edges, tree_metrics
from .flowtable import (FlowEntry, build_route_dict, dumps_entries, emit_flow_entries, port_map, prune_redundant,
                        replay_reachability)
from .topology import (METRICS, NliSnapshot, Topology, default_topology_path, generate_snapshots,
                       generate_traffic_matrices, load_snapshots, load_topology, save_snapshots)

log = logging.getLogger(__name__)

METHODS = ("DRL", "KMB_bw", "KMB_delay", "KMB_loss", "oracle")
EVAL_COLUMNS = ("snapshot", "method", "bw_tree", "delay_tree", "loss_tree", "length", "redundancy", "reward")
DEFAULT_REQUEST = MulticastRequest(12, (2, 4, 11))


class NonConverged(RuntimeError):
    pass


@dataclass
class RunConfig:
    topology: Path = field(default_factory=default_topology_path)
    snapshots: Path | None = None
    request: MulticastRequest = DEFAULT_REQUEST
    reward: RewardConfig = RewardConfig.from_ratio("1:0.01")
    train: TrainConfig = TrainConfig()
    eval_indices: tuple[int, ...] | None = None
    out: Path = Path("runs")
    seed: int = 0

    def __post_init__(self):
        self.topology = Path(self.topology)
        self.out = Path(self.out)
        if self.snapshots is not None:
            self.snapshots = Path(self.snapshots)
        if self.train.seed != self.seed:
            self.train = replace(self.train, seed=self.seed)

    def load_topology(self) -> Topology:
        if not self.topology.is_file():
            raise FileNotFoundError(f"topology file not found: {self.topology}")
        topo = load_topology(self.topology)
        self.request.check(topo.n)
        return topo

    def load_snapshots(self) -> list[NliSnapshot]:
        if self.snapshots is None or not self.snapshots.is_file():
            raise FileNotFoundError(f"snapshot store not found: {self.snapshots}")
        return load_snapshots(self.snapshots)

    def to_dict(self) -> dict:
        return {
            "topology": str(self.topology),
            "snapshots": None if self.snapshots is None else str(self.snapshots),
            "source": self.request.source,
            "destinations": list(self.request.destinations),
            "ratio": self.reward.ratio,
            "beta": list(self.reward.beta),
            "r_trap": self.reward.r_trap,
            "train": self.train.to_dict(),
            "eval_indices": None if self.eval_indices is None else list(self.eval_indices),
            "out": str(self.out),
            "seed": self.seed,
        }


def _write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def summarize(snaps: Sequence[NliSnapshot], topo: Topology) -> dict[str, dict[str, float]]:
    out = {}
    for metric in METRICS:
        v = np.concatenate([s.edge_values(topo, metric) for s in snaps])
        out[metric] = {"min": float(v.min()), "mean": float(v.mean()), "max": float(v.max())}
    return out


def cmd_simulate(cfg: RunConfig, count: int = 24) -> tuple[Path, dict]:
    topo = cfg.load_topology()
    tms = generate_traffic_matrices(topo.n, count, seed=cfg.seed)
    snaps = generate_snapshots(topo, tms, seed=cfg.seed)
    path = cfg.snapshots or cfg.out / "snapshots.jsonl"
    path.parent.mkdir(parents=True, exist_ok=True)
    save_snapshots(path, snaps, cfg.seed)
    return path, summarize(snaps, topo)


def cmd_train(cfg: RunConfig, snaps: Sequence[NliSnapshot] | None = None) -> tuple[Path, Path]:
    topo = cfg.load_topology()
    snaps = list(snaps) if snaps is not None else cfg.load_snapshots()
    cfg.out.mkdir(parents=True, exist_ok=True)
    resolved = cfg.to_dict()
    log.info("resolved config: %s", json.dumps(resolved, sort_keys=True))
    (cfg.out / "config.json").write_text(json.dumps(resolved, indent=2, sort_keys=True) + "\n")
    agent, logs = train(topo, snaps, cfg.request, cfg.train, cfg.reward)
    ckpt, log_path = cfg.out / "checkpoint.pt", cfg.out / "train_log.csv"
    save_checkpoint(agent, ckpt, extra={"run": resolved})
    write_log_csv(log_path, logs)
    return ckpt, log_path


def prune_tree(topo: Topology, req: MulticastRequest, tree: PartialTree) -> PartialTree:
    dropped = set(redundant_edges(topo, req, tree))
    return PartialTree.from_edges(topo, req.source, [e for e in tree.edges if e not in dropped])


@dataclass(frozen=True)
class EvalRow:
    snapshot: int
    method: str
    bw_tree: float
    delay_tree: float
    loss_tree: float
    length: int | float
    redundancy: int | float
    reward: float
    steps: int | float

    def csv_row(self) -> list:
        return [self.snapshot, self.method, repr(float(self.bw_tree)), repr(float(self.delay_tree)),
                repr(float(self.loss_tree)), self.length, self.redundancy, repr(float(self.reward))]


def score_tree(topo: Topology, req: MulticastRequest, tree: PartialTree, snap: NliSnapshot, reward: RewardConfig,
               index: int, method: str) -> EvalRow:
    """Metrics of the pruned tree; ``redundancy`` counts the edges pruning removed."""
    redundancy = len(redundant_edges(topo, req, tree))
    pruned = prune_tree(topo, req, tree)
    mt = tree_metrics(topo, req, pruned, snap)
    return EvalRow(index, method, mt.bw_tree, mt.delay_tree, mt.loss_tree, mt.length, redundancy,
                   finish_from_metrics(topo, req, mt, snap, reward), len(tree.edges))


def evaluate_snapshot(policy, topo: Topology, req: MulticastRequest, snap: NliSnapshot, reward: RewardConfig,
                      index: int) -> list[EvalRow]:
    rows = []
    result: RolloutResult = greedy_rollout(policy, topo, req, snap, reward)
    if result.converged:
        rows.append(score_tree(topo, req, result.tree, snap, reward, index, "DRL"))
    else:
        nan = float("nan")
        rows.append(EvalRow(index, "DRL", nan, nan, nan, nan, nan, nan, result.steps))
    for regime in WeightRegime:
        rows.append(score_tree(topo, req, kmb(topo, snap, regime, req), snap, reward, index, f"KMB_{regime.value}"))
    best = exact_steiner_oracle(topo, snap, req, "r_finish", reward)
    rows.append(score_tree(topo, req, best.tree, snap, reward, index, "oracle"))
    return rows


def cmd_evaluate(cfg: RunConfig, checkpoint: str | Path, aggregate: bool = False) -> tuple[Path, list[EvalRow]]:
    topo = cfg.load_topology()
    policy, _, _ = load_checkpoint(checkpoint, topo)
    snaps = cfg.load_snapshots()
    indices = cfg.eval_indices if cfg.eval_indices is not None else tuple(range(len(snaps)))
    rows: list[EvalRow] = []
    for i in indices:
        rows.extend(evaluate_snapshot(policy, topo, cfg.request, snaps[i], cfg.reward, i))
    path = cfg.out / "evaluate.csv"
    _write_csv(path, EVAL_COLUMNS, [r.csv_row() for r in rows])
    if aggregate:
        _write_csv(cfg.out / "aggregate.csv", ("method", "ratio", *AGG_COLUMNS),
                   [[m, cfg.reward.ratio, *(repr(v) for v in vals)] for m, vals in aggregate_rows(rows).items()])
    return path, rows


AGG_COLUMNS = ("steps", "redundancy", "bw_tree", "delay_tree", "loss_tree", "reward", "converged")


def aggregate_rows(rows: Sequence[EvalRow]) -> dict[str, list[float]]:
    """Per-method means over snapshots; non-converged rollouts are excluded and counted separately."""
    out = {}
    for method in METHODS:
        mine = [r for r in rows if r.method == method]
        ok = [r for r in mine if not math.isnan(r.reward)]
        if not mine:
            continue
        mean = (lambda key: float(np.mean([getattr(r, key) for r in ok])) if ok else float("nan"))
        out[method] = [mean("steps"), mean("redundancy"), mean("bw_tree"), mean("delay_tree"), mean("loss_tree"),
                       mean("reward"), float(len(ok)) / len(mine)]
    return out


def cmd_install(cfg: RunConfig, checkpoint: str | Path, index: int, group: int = 1,
                dry_run: bool = False) -> tuple[list[FlowEntry], Path | None]:
    topo = cfg.load_topology()
    policy, _, _ = load_checkpoint(checkpoint, topo)
    snaps = cfg.load_snapshots()
    if not 0 <= index < len(snaps):
        raise IndexError(f"snapshot index {index} outside store of {len(snaps)}")
    result = greedy_rollout(policy, topo, cfg.request, snaps[index], cfg.reward)
    if not result.converged:
        raise NonConverged(f"greedy rollout stalled after actions {result.actions} "
                           f"with tree edges {result.tree.edges}")
    req = cfg.request
    info = prune_redundant(build_route_dict(result.tree.pairs, req.source), req.destinations)
    ports = port_map({x: topo.neighbors(x) for x in topo.nodes})
    entries = emit_flow_entries(info, ports, group, req.destinations)
    reached = replay_reachability(entries, ports, req.source)
    missing = set(req.destinations) - reached
    if missing:
        raise NonConverged(f"flow table does not deliver to {sorted(missing)}")
    if dry_run:
        return entries, None
    path = cfg.out / f"flows_snapshot{index}.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps_entries(entries) + "\n")
    return entries, path


def cmd_timing(cfg: RunConfig, counts: Sequence[int] = (1, 2, 4, 8), episodes: int = 200) -> tuple[Path, list]:
    """Wall time of a fixed short training profile for each snapshot count."""
    topo = cfg.load_topology()
    profile = replace(cfg.train, episodes=episodes)
    rows = []
    for c in counts:
        snaps = generate_snapshots(topo, generate_traffic_matrices(topo.n, c, seed=cfg.seed), seed=cfg.seed)
        started = time.perf_counter()
        train(topo, snaps, cfg.request, profile, cfg.reward)
        rows.append((c, time.perf_counter() - started))
    path = cfg.out / "timing.csv"
    _write_csv(path, ("nli_count", "seconds"), [(c, f"{s:.4f}") for c, s in rows])
    return path, rows


def linear_r2(x: Sequence[float], y: Sequence[float]) -> float:
    x, y = np.asarray(x, float), np.asarray(y, float)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    total = ((y - y.mean()) ** 2).sum()
    return float(1.0 - (resid ** 2).sum() / total) if total > 0 else 1.0


def cmd_oracle(cfg: RunConfig, objective: str = "r_finish") -> tuple[Path, list[dict]]:
    topo = cfg.load_topology()
    snaps = cfg.load_snapshots()
    indices = cfg.eval_indices if cfg.eval_indices is not None else tuple(range(len(snaps)))
    fixtures = []
    for i in indices:
        res = exact_steiner_oracle(topo, snaps[i], cfg.request, objective, cfg.reward)
        fixtures.append(oracle_fixture(topo, snaps[i], cfg.request, res))
    path = cfg.out / f"oracle_{objective.replace(':', '_')}.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    write_fixtures(path, fixtures)
    return path, fixtures
