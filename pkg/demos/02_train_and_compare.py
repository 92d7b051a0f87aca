"""Teach an agent one multicast request, then put it next to the classic heuristics.

The request is source 12 to destinations {2, 4, 11}. A short training run
on a single snapshot is enough for the greedy policy to settle on a
loop-free tree without dangling branches; this script prints that tree's
metrics beside three KMB variants (each minimizing a different link cost)
and the exhaustive optimum. Pass a larger episode count to watch the
learned tree move toward the optimum.

Takes about a minute on one CPU core at the default 600 episodes.

    python demos/02_train_and_compare.py [episodes]
"""
import sys

from mcast_rl.agent import TrainConfig, train
from mcast_rl.baselines import WeightRegime, exact_steiner_oracle, kmb
from mcast_rl.env import MulticastRequest, RewardConfig
from mcast_rl.harness import score_tree
from mcast_rl.topology import default_topology, generate_snapshots, generate_traffic_matrices

episodes = int(sys.argv[1]) if len(sys.argv) > 1 else 600
topo = default_topology()
snaps = generate_snapshots(topo, generate_traffic_matrices(topo.n, 1, seed=11), seed=11)
snap = snaps[0]
req = MulticastRequest(12, (2, 4, 11))
reward = RewardConfig.from_ratio("1:0.01")


def progress(log):
    if log.episode % 100 == 0:
        print(f"  episode {log.episode:4d}  reward {log.mean_reward:7.3f}  steps {log.mean_steps:5.1f}  "
              f"epsilon {log.epsilon:.3f}")


print(f"training for {episodes} episodes")
cfg = TrainConfig(episodes=episodes, conv_channels=(8, 8), hidden=(128, 64), seed=0)
agent, _ = train(topo, snaps, req, cfg, reward, on_episode=progress)

rollout = agent.rollout(req, snap, reward)
trees = {}
if rollout.converged:
    trees["DRL"] = rollout.tree
else:
    print(f"greedy rollout stalled after {rollout.actions}; try more episodes")
for regime in WeightRegime:
    trees[f"KMB_{regime.value}"] = kmb(topo, snap, regime, req)
best = exact_steiner_oracle(topo, snap, req, "r_finish", reward)
trees["oracle"] = best.tree
print(f"\nexhaustive search scored {best.candidates} candidate trees")

print(f"\n{'method':10s} {'bw_tree':>8s} {'delay':>8s} {'loss':>8s} {'links':>6s} {'R_finish':>9s}")
for name, tree in trees.items():
    row = score_tree(topo, req, tree, snap, reward, 0, name)
    print(f"{name:10s} {row.bw_tree:8.3f} {row.delay_tree:8.2f} {row.loss_tree:8.4f} {row.length:6d} "
          f"{row.reward:9.4f}")
