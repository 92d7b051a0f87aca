import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from mcast_rl.env import MulticastRequest
from mcast_rl.topology import (ABSENT, NliSnapshot, default_topology, generate_snapshots, generate_traffic_matrices,
                               normalize_nli, parse_topology)

settings.register_profile("repo", deadline=None, derandomize=True, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")


def topo_from_edges(n, edges, capacity=10.0, delay=1.0):
    lines = [f"nodes {n}"] + [f"edge {u} {v} {capacity} {delay}" for u, v in edges]
    return parse_topology("\n".join(lines))


def snapshot_from_values(topo, bw, delay, loss, index=0):
    """Snapshot whose per-edge raw values are given directly, in edge-index order."""
    mats = []
    for values in (bw, delay, loss):
        mat = np.full((topo.n, topo.n), ABSENT)
        for lk, x in zip(topo.links, values):
            mat[lk.u, lk.v] = mat[lk.v, lk.u] = x
        mats.append(mat)
    return normalize_nli(NliSnapshot(index, *mats))


def random_connected_topology(rng, n, extra):
    """Random spanning tree plus ``extra`` chords, unit capacities and delays."""
    edges = set()
    for v in range(1, n):
        u = int(rng.integers(v))
        edges.add((u, v))
    candidates = [(i, j) for i in range(n) for j in range(i + 1, n) if (i, j) not in edges]
    for k in rng.permutation(len(candidates))[:extra]:
        edges.add(candidates[k])
    return topo_from_edges(n, sorted(edges))


@pytest.fixture(scope="session")
def topo():
    return default_topology()


@pytest.fixture(scope="session")
def req():
    return MulticastRequest(12, (2, 4, 11))


@pytest.fixture(scope="session")
def snaps3(topo):
    return generate_snapshots(topo, generate_traffic_matrices(topo.n, 3, seed=1), seed=1)


@pytest.fixture
def triangle():
    return topo_from_edges(3, [(0, 1), (0, 2), (1, 2)])
