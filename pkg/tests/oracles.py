"""Slow, independent reimplementations used as test oracles."""
import itertools
import math

import networkx as nx
import numpy as np


def naive_case(endpoints, tree_edges, tree_nodes, edge):
    """Case label straight from the four-way definition, written without the library's helpers."""
    u, v = endpoints[edge]
    if edge in tree_edges:
        return "IN_TREE"
    inside = [u in tree_nodes, v in tree_nodes]
    if all(inside):
        return "LOOP"
    if any(inside):
        return "JOINABLE"
    return "DETACHED"


def tree_graph(topo, edges):
    g = nx.Graph()
    for e in edges:
        lk = topo.links[e]
        g.add_edge(lk.u, lk.v, index=e)
    return g


def straight_line_r_finish(topo, source, destinations, edges, snap, beta):
    """Whole-tree reward recomputed from raw per-link values with networkx paths."""
    g = tree_graph(topo, edges)
    bw = {lk.index: snap.bw[lk.u, lk.v] for lk in topo.links}
    dl = {lk.index: snap.delay[lk.u, lk.v] for lk in topo.links}
    ls = {lk.index: snap.loss[lk.u, lk.v] for lk in topo.links}
    bottlenecks = []
    for d in destinations:
        path = nx.shortest_path(g, source, d)
        bottlenecks.append(min(bw[g.edges[a, b]["index"]] for a, b in zip(path, path[1:])))
    bw_tree = sum(bottlenecks) / len(bottlenecks)
    delay_tree = sum(dl[e] for e in edges)
    keep = 1.0
    for e in edges:
        keep *= 1.0 - ls[e]
    loss_tree = 1.0 - keep
    all_bw = list(bw.values())
    all_delay = list(dl.values())
    count = 1 + len(destinations)
    bw_range = max(all_bw) - min(all_bw)
    bw_hat = 0.0 if bw_range == 0 else (bw_tree - min(all_bw)) / bw_range
    low = min(all_delay) * count
    delay_range = sum(all_delay) - low
    delay_hat = 0.0 if delay_range <= 0 else (delay_tree - low) / delay_range
    bw_hat = min(max(bw_hat, 0.0), 1.0)
    delay_hat = min(max(delay_hat, 0.0), 1.0)
    return beta[0] * bw_hat + beta[1] * (1 - delay_hat) + beta[2] * (1 - loss_tree)


def all_steiner_trees(topo, terminals):
    """Every edge subset that is a tree spanning the terminals with only terminal leaves (2^m scan)."""
    terminals = set(terminals)
    out = []
    for r in range(len(terminals) - 1, topo.m + 1):
        for subset in itertools.combinations(range(topo.m), r):
            g = tree_graph(topo, subset)
            g.add_nodes_from(terminals)
            if not nx.is_tree(g):
                continue
            if any(g.degree(x) == 1 and x not in terminals for x in g.nodes):
                continue
            out.append(tuple(sorted(subset)))
    return out


def scalar_td(transition, q_policy, q_target, gamma):
    """Double-DQN error for one transition given Q-value callables on single states."""
    q_now = q_policy(transition.state)[transition.action]
    if transition.next_state is None:
        return transition.n_step_return - q_now
    q_next_policy = q_policy(transition.next_state)
    best = max(range(len(q_next_policy)), key=lambda a: (q_next_policy[a], -a))
    boot = q_target(transition.next_state)[best]
    return transition.n_step_return + gamma ** transition.steps_spanned * boot - q_now


def log_domain_loss(losses):
    return -math.expm1(float(np.sum(np.log1p(-np.asarray(losses, dtype=float)))))
