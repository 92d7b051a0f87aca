"""Dueling double DQN agent: exploration schedule, TD errors, training loop, greedy rollout."""
from __future__ import annotations

import copy
import csv
import hashlib
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from .env import ActionCase, MulticastEnv, MulticastRequest, PartialTree, RewardConfig
from .network import QNetwork, QNetworkSpec, forward_q
from .replay import NStepBuffer, PrioritizedReplay, Transition
from .topology import NliSnapshot, Topology

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


class TrainingDiverged(RuntimeError):
    """Raised when the loss becomes non-finite; carries a diagnostic dump."""

    def __init__(self, message: str, dump: dict):
        super().__init__(message)
        self.dump = dump


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 16
    n_step: int = 1
    target_update: int = 10
    gamma: float = 0.9
    episodes: int = 4000
    eps_start: float = 1.0
    eps_final: float = 0.05
    eps_decay: float = 200.0
    buffer_capacity: int = 10_000
    alpha_per: float = 0.6
    beta_start: float = 0.4
    beta_final: float = 1.0
    eps_priority: float = 1e-5
    conv_channels: tuple[int, int] = (32, 32)
    hidden: tuple[int, int] = (256, 128)
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in (0, 1], got {self.gamma}")
        if self.eps_final > self.eps_start:
            raise ValueError("eps_final must not exceed eps_start")
        if self.batch_size < 1 or self.n_step < 1 or self.target_update < 1:
            raise ValueError("batch_size, n_step and target_update must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        for key in ("conv_channels", "hidden"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


def epsilon(episode: int, cfg: TrainConfig) -> float:
    return cfg.eps_final + (cfg.eps_start - cfg.eps_final) * math.exp(-episode / cfg.eps_decay)


def select_action(q: np.ndarray, eps: float, rng: np.random.Generator) -> int:
    """Epsilon-greedy: uniform over all edges with probability ``eps``, else the first argmax."""
    if rng.random() < eps:
        return int(rng.integers(len(q)))
    return int(np.argmax(q))


def _batch(states: Sequence[np.ndarray], dtype) -> torch.Tensor:
    return torch.as_tensor(np.stack(states), dtype=dtype)


def td_errors(batch: Sequence[Transition], policy: QNetwork, target: QNetwork, gamma: float) -> torch.Tensor:
    """Double-DQN TD errors; differentiable with respect to ``policy``.

    The next action is chosen by the policy network and scored by the target
    network. Terminal successors contribute no bootstrap term.
    """
    dtype = next(policy.parameters()).dtype
    states = _batch([t.state for t in batch], dtype)
    actions = torch.as_tensor([t.action for t in batch], dtype=torch.long)
    returns = torch.as_tensor([t.n_step_return for t in batch], dtype=dtype)
    q_taken = policy(states).gather(1, actions[:, None]).squeeze(1)
    live = [i for i, t in enumerate(batch) if t.next_state is not None]
    bootstrap = torch.zeros(len(batch), dtype=dtype)
    if live:
        nxt = _batch([batch[i].next_state for i in live], dtype)
        with torch.no_grad():
            best = policy(nxt).argmax(dim=1, keepdim=True)
            q_next = target(nxt).gather(1, best).squeeze(1)
            discount = torch.as_tensor([gamma ** batch[i].steps_spanned for i in live], dtype=dtype)
            bootstrap[live] = discount * q_next
    return returns + bootstrap - q_taken


@dataclass
class EpisodeLog:
    episode: int
    mean_reward: float
    mean_steps: float
    epsilon: float
    loss_mean: float
    wall_ms: float


@dataclass
class RolloutResult:
    tree: PartialTree
    actions: list[int]
    converged: bool
    status: str = "OK"

    @property
    def steps(self) -> int:
        return len(self.actions)


class DQNAgent:
    """Policy and target networks plus the optimizer state they share."""

    def __init__(self, topo: Topology, cfg: TrainConfig = TrainConfig()):
        self.topo = topo
        self.cfg = cfg
        torch.manual_seed(cfg.seed)
        self.spec = QNetworkSpec(topo.n, topo.m, cfg.conv_channels, cfg.hidden)
        self.policy = QNetwork(self.spec)
        self.target = copy.deepcopy(self.policy)
        self.target.requires_grad_(False)
        try:
            self.optimizer = torch.optim.Adam(self.policy.parameters(), lr=cfg.learning_rate, fused=True)
        except (RuntimeError, TypeError):
            self.optimizer = torch.optim.Adam(self.policy.parameters(), lr=cfg.learning_rate)
        self.learner_steps = 0

    def q_values(self, state: np.ndarray) -> np.ndarray:
        return forward_q(self.policy, state)

    def sync_target(self) -> None:
        self.target.load_state_dict(self.policy.state_dict())

    def learn(self, batch: Sequence[Transition], weights: np.ndarray) -> tuple[np.ndarray, float]:
        delta = td_errors(batch, self.policy, self.target, self.cfg.gamma)
        w = torch.as_tensor(weights, dtype=delta.dtype)
        loss = (w * delta.pow(2)).mean()
        if not torch.isfinite(loss):
            raise TrainingDiverged(f"non-finite loss {loss.item()} at learner step {self.learner_steps}", {
                "learner_step": self.learner_steps,
                "td_errors": delta.detach().tolist(),
                "weights": list(map(float, weights)),
                "returns": [t.n_step_return for t in batch],
                "actions": [t.action for t in batch],
            })
        self.optimizer.zero_grad()
        loss.backward()
        self.optimizer.step()
        self.learner_steps += 1
        if self.learner_steps % self.cfg.target_update == 0:
            self.sync_target()
        return delta.detach().numpy(), float(loss.item())

    def rollout(self, req: MulticastRequest, snap: NliSnapshot, reward: RewardConfig = RewardConfig()) -> RolloutResult:
        return greedy_rollout(self.policy, self.topo, req, snap, reward)


def train(topo: Topology, snapshots: Sequence[NliSnapshot], req: MulticastRequest, cfg: TrainConfig = TrainConfig(),
          reward: RewardConfig = RewardConfig(), env_factory: Callable[..., MulticastEnv] = MulticastEnv,
          on_episode: Callable[[EpisodeLog], None] | None = None) -> tuple[DQNAgent, list[EpisodeLog]]:
    """Train a fresh agent; every episode runs one construction per snapshot."""
    if not snapshots:
        raise ValueError("training needs at least one snapshot")
    torch.set_num_threads(1)
    agent = DQNAgent(topo, cfg)
    env = env_factory(topo, reward)
    replay = PrioritizedReplay(cfg.buffer_capacity, cfg.alpha_per, cfg.eps_priority)
    staging = NStepBuffer(cfg.n_step, cfg.gamma)
    rng = np.random.default_rng(cfg.seed)
    logs: list[EpisodeLog] = []
    for episode in range(cfg.episodes):
        started = time.perf_counter()
        eps = epsilon(episode, cfg)
        beta = cfg.beta_start + (cfg.beta_final - cfg.beta_start) * episode / max(cfg.episodes - 1, 1)
        rewards, steps, losses = [], [], []
        for snap in snapshots:
            state = env.reset(req, snap)
            staging.clear()
            total = 0.0
            while True:
                action = select_action(agent.q_values(state), eps, rng)
                res = env.step(action)
                total += res.reward
                # a truncated episode is cut short, not finished: keep bootstrapping from it
                successor = res.state if not res.done or res.truncated else None
                for tr in staging.push(state, action, res.reward, successor, res.done):
                    replay.insert(tr)
                if len(replay) >= cfg.batch_size:
                    batch, weights, idx = replay.sample(cfg.batch_size, beta, rng)
                    delta, loss = agent.learn(batch, weights)
                    replay.update(idx, delta)
                    losses.append(loss)
                if res.done:
                    break
                state = res.state
            rewards.append(total)
            steps.append(env.t)
        row = EpisodeLog(episode, float(np.mean(rewards)), float(np.mean(steps)), eps,
                         float(np.mean(losses)) if losses else float("nan"),
                         (time.perf_counter() - started) * 1000.0)
        logs.append(row)
        if on_episode is not None:
            on_episode(row)
    return agent, logs


def greedy_rollout(policy: QNetwork, topo: Topology, req: MulticastRequest, snap: NliSnapshot,
                   reward: RewardConfig = RewardConfig(), max_steps: int | None = None) -> RolloutResult:
    """Build a tree by always taking the highest-Q edge.

    A trap action leaves the state unchanged, so a deterministic greedy
    policy would repeat it until the step cap; that case is reported as
    NON_CONVERGED as soon as it happens.
    """
    env = MulticastEnv(topo, reward, max_invalid=0)
    state = env.reset(req, snap)
    actions: list[int] = []
    cap = max_steps if max_steps is not None else 50 * topo.m
    while len(actions) < cap:
        a = int(np.argmax(forward_q(policy, state)))
        actions.append(a)
        res = env.step(a)
        if res.case is not ActionCase.JOINABLE:
            return RolloutResult(env.tree, actions, False, "NON_CONVERGED")
        if res.done:
            return RolloutResult(env.tree, actions, True)
        state = res.state
    return RolloutResult(env.tree, actions, False, "NON_CONVERGED")


def write_log_csv(path: str | Path, logs: Sequence[EpisodeLog]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["episode", "mean_reward", "mean_steps", "epsilon", "loss_mean", "wall_ms"])
        for r in logs:
            w.writerow([r.episode, repr(r.mean_reward), repr(r.mean_steps), repr(r.epsilon), repr(r.loss_mean),
                        f"{r.wall_ms:.3f}"])


# --- checkpoints ------------------------------------------------------------

def save_checkpoint(agent: DQNAgent, path: str | Path, extra: dict | None = None) -> None:
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "topology_hash": agent.topo.digest(),
        "cfg": agent.cfg.to_dict(),
        "cfg_hash": hashlib.sha256(json.dumps(agent.cfg.to_dict(), sort_keys=True).encode()).hexdigest(),
        "network": agent.spec.to_dict(),
        "shapes": {k: list(v.shape) for k, v in agent.policy.state_dict().items()},
        "params": {k: v.clone() for k, v in agent.policy.state_dict().items()},
        "extra": extra or {},
    }
    torch.save(payload, path)


def load_checkpoint(path: str | Path, topo: Topology | None = None) -> tuple[QNetwork, TrainConfig, dict]:
    """Load policy parameters; refuses files from another format or topology."""
    try:
        payload = torch.load(path, weights_only=True)
    except Exception as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    if not isinstance(payload, dict) or payload.get("format_version") != CHECKPOINT_VERSION:
        found = payload.get("format_version") if isinstance(payload, dict) else None
        raise CheckpointError(f"checkpoint format version {found}, expected {CHECKPOINT_VERSION}")
    spec = QNetworkSpec.from_dict(payload["network"])
    if topo is not None:
        if spec.m != topo.m or spec.n != topo.n:
            raise CheckpointError(f"checkpoint network has n={spec.n}, m={spec.m}; "
                                  f"topology expects n={topo.n}, m={topo.m}")
        if payload["topology_hash"] != topo.digest():
            raise CheckpointError("checkpoint was trained on a different topology (hash mismatch)")
    net = QNetwork(spec)
    expected = {k: list(v.shape) for k, v in net.state_dict().items()}
    got = {k: list(v.shape) for k, v in payload["params"].items()}
    if expected != got:
        bad = {k: (expected.get(k), got.get(k)) for k in set(expected) | set(got) if expected.get(k) != got.get(k)}
        raise CheckpointError(f"parameter shapes do not match the network (expected, actual): {bad}")
    net.load_state_dict(payload["params"])
    net.eval()
    return net, TrainConfig.from_dict(payload["cfg"]), payload
