"""End-to-end acceptance checks.

Each test prints one ``CRITERION <n> PASS|FAIL`` line with the numbers it
judged. Criteria 1 and 2 share ten full-length training runs (five seeds at
two reward ratios), so the whole module takes a couple of hours on one CPU.
"""
import os
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from mcast_rl import harness
from mcast_rl.agent import TrainConfig, save_checkpoint, train
from mcast_rl.baselines import exact_steiner_oracle
from mcast_rl.env import MulticastRequest, RewardConfig, reward_finish, tree_metrics
from mcast_rl.topology import default_topology, generate_snapshots, generate_traffic_matrices

pytestmark = pytest.mark.acceptance

SEEDS = (0, 1, 2, 3, 4)
EPISODES = 4000
TRAIN_STORE_SEED = 1
HELD_OUT_SEED = 2
LEAN = dict(conv_channels=(8, 8), hidden=(128, 64))
REQUEST = MulticastRequest(12, (2, 4, 11))
TESTS = Path(__file__).parent

PROPERTY_SUITE = [
    "test_agent.py::TestNetwork::test_mean_zero_identity",
    "test_agent.py::TestNetwork::test_gradient_matches_finite_differences",
    "test_replay.py::TestSumTree::test_root_equals_leaf_sum_after_many_updates",
    "test_replay.py::TestPrioritizedReplay::test_empirical_frequencies",
    "test_agent.py::TestExploration::test_epsilon_values",
    "test_agent.py::TestExploration::test_epsilon_monotone_and_bounded",
    "test_env.py::TestClassify::test_partition_matches_naive_definition",
    "test_env.py::TestTreeMetrics::test_loss_product_matches_log_domain",
    "test_env.py::TestTreeMetrics::test_growth_is_acyclic_and_monotone",
    "test_flowtable.py::TestPrune::test_idempotent_and_consistent_with_metrics",
    "test_flowtable.py::TestFlowEntries::test_reachability_and_json_round_trip",
    "test_baselines.py::TestKmb::test_within_twice_optimum",
    "test_harness_cli.py::TestPipeline::test_rerun_is_deterministic",
]


def report(capsys, number, passed, detail):
    with capsys.disabled():
        print(f"\nCRITERION {number} {'PASS' if passed else 'FAIL'}: {detail}")


@pytest.fixture(scope="module")
def topo():
    return default_topology()


@pytest.fixture(scope="module")
def train_snaps(topo):
    return generate_snapshots(topo, generate_traffic_matrices(topo.n, 3, seed=TRAIN_STORE_SEED),
                              seed=TRAIN_STORE_SEED)


@pytest.fixture(scope="module")
def runs(topo, train_snaps):
    """Greedy rollouts of every trained policy, keyed by (ratio, seed)."""
    out = {}
    for ratio in ("1:0.01", "1:1"):
        reward = RewardConfig.from_ratio(ratio)
        for seed in SEEDS:
            agent, _ = train(topo, train_snaps, REQUEST, TrainConfig(episodes=EPISODES, seed=seed, **LEAN), reward)
            out[ratio, seed] = (agent, [agent.rollout(REQUEST, s, reward) for s in train_snaps])
    return out


def rollout_summary(topo, snaps, rollouts):
    """Mean steps and redundancy, or None when some rollout never reached every destination."""
    if not all(r.converged for r in rollouts):
        return None
    redundancy = [tree_metrics(topo, REQUEST, r.tree, s).redundancy for r, s in zip(rollouts, snaps)]
    return float(np.mean([r.steps for r in rollouts])), float(np.mean(redundancy))


def test_reward_ratio_reproduction(topo, train_snaps, runs, capsys):
    verdicts = []
    for seed in SEEDS:
        low = rollout_summary(topo, train_snaps, runs["1:0.01", seed][1])
        high = rollout_summary(topo, train_snaps, runs["1:1", seed][1])
        ok = (low is not None and high is not None and low[1] == 0 and low[0] <= 8 and high[1] > low[1])
        verdicts.append(ok)
        fmt = lambda s: "non-converged" if s is None else f"steps {s[0]:.2f} redundancy {s[1]:.2f}"
        with capsys.disabled():
            print(f"\n  seed {seed}: 1:0.01 {fmt(low)} | 1:1 {fmt(high)} -> {'ok' if ok else 'miss'}")
    passed = sum(verdicts) >= 3
    report(capsys, 1, passed, f"{sum(verdicts)}/5 seeds satisfy both conditions (need 3)")
    assert passed


def test_oracle_optimality(topo, train_snaps, runs, capsys):
    reward = RewardConfig.from_ratio("1:0.01")
    verdicts = []
    for seed in SEEDS:
        gaps = []
        for r, snap in zip(runs["1:0.01", seed][1], train_snaps):
            best = exact_steiner_oracle(topo, snap, REQUEST, "r_finish", reward).value
            if not r.converged:
                gaps.append(np.inf)
                continue
            got = reward_finish(topo, REQUEST, harness.prune_tree(topo, REQUEST, r.tree), snap, reward)
            gaps.append((best - got) / abs(best))
        ok = max(gaps) <= 0.02
        verdicts.append(ok)
        with capsys.disabled():
            print(f"\n  seed {seed}: relative gaps {[round(g, 5) for g in gaps]} -> {'ok' if ok else 'miss'}")
    passed = sum(verdicts) >= 3
    report(capsys, 2, passed, f"{sum(verdicts)}/5 seeds within 2% on all training snapshots (need 3)")
    assert passed


def test_kmb_directionality(topo, runs, tmp_path, capsys):
    agent = runs["1:0.01", SEEDS[0]][0]
    ckpt = tmp_path / "policy.pt"
    save_checkpoint(agent, ckpt)
    cfg = harness.RunConfig(snapshots=tmp_path / "held_out.jsonl", out=tmp_path, seed=HELD_OUT_SEED,
                            train=TrainConfig(**LEAN))
    harness.cmd_simulate(cfg, count=24)
    _, rows = harness.cmd_evaluate(cfg, ckpt, aggregate=True)
    agg = harness.aggregate_rows(rows)
    col = {name: i for i, name in enumerate(harness.AGG_COLUMNS)}
    bw = {m: v[col["bw_tree"]] for m, v in agg.items()}
    loss = {m: v[col["loss_tree"]] for m, v in agg.items()}
    checks = {
        "bw DRL >= KMB_delay": bw["DRL"] >= bw["KMB_delay"],
        "bw DRL >= KMB_loss": bw["DRL"] >= bw["KMB_loss"],
        "loss DRL <= KMB_bw": loss["DRL"] <= loss["KMB_bw"],
        "loss DRL <= KMB_delay": loss["DRL"] <= loss["KMB_delay"],
    }
    with capsys.disabled():
        for m in harness.METHODS:
            print(f"\n  {m:9s} bw_tree {bw[m]:.4f} loss_tree {loss[m]:.6f} converged {agg[m][col['converged']]:.2f}")
    failed = [k for k, ok in checks.items() if not ok]
    report(capsys, 3, not failed, "all four orderings hold" if not failed else f"violated: {failed}")
    assert not failed


def test_property_suite_runtime(capsys):
    started = time.perf_counter()
    proc = subprocess.run([sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider",
                           *(str(TESTS / t) for t in PROPERTY_SUITE)],
                          cwd=TESTS.parent, capture_output=True, text=True, env={**os.environ})
    elapsed = time.perf_counter() - started
    passed = proc.returncode == 0 and elapsed < 300
    tail = proc.stdout.strip().splitlines()[-1] if proc.stdout.strip() else proc.stderr[-200:]
    report(capsys, 4, passed, f"{len(PROPERTY_SUITE)} property tests, '{tail}', {elapsed:.1f} s (limit 300 s)")
    assert proc.returncode == 0, proc.stdout[-4000:]
    assert elapsed < 300


def test_timing_linearity(tmp_path, capsys):
    cfg = harness.RunConfig(out=tmp_path, train=TrainConfig(**LEAN))
    _, rows = harness.cmd_timing(cfg, counts=(1, 2, 4, 8), episodes=200)
    r2 = harness.linear_r2(*zip(*rows))
    detail = ", ".join(f"{c}: {s:.1f} s" for c, s in rows)
    report(capsys, 5, r2 > 0.9, f"R^2 {r2:.4f} (need > 0.9); {detail}")
    assert r2 > 0.9
