"""Turn an edge set into switch rules.

A tree built edge by edge can carry branches that reach no destination.
Walking parent pointers back from each destination keeps only the useful
part; every surviving switch then gets one rule, and a switch with two
children replicates the packet onto two ports.

    python demos/03_install_flow_table.py
"""
from mcast_rl.env import MulticastRequest, PartialTree
from mcast_rl.flowtable import (build_route_dict, dumps_entries, emit_flow_entries, kept_edges, port_map,
                                prune_redundant, replay_reachability)
from mcast_rl.topology import default_topology

topo = default_topology()
req = MulticastRequest(12, (2, 4, 11))

# A tree that reaches every destination, plus a detour toward node 13 that
# serves nobody. Edges are given as node pairs in the order they were added.
pairs = [(12, 9), (9, 8), (8, 11), (9, 3), (3, 4), (4, 2), (12, 13), (13, 10)]
tree = PartialTree.from_edges(topo, req.source, [topo.edge_index(u, v) for u, v in pairs])
print(f"tree edges: {sorted(tuple(sorted(p)) for p in tree.pairs)}")

route = build_route_dict(tree.pairs, req.source)
info = prune_redundant(route, req.destinations)
kept = kept_edges(info)
dropped = {tuple(sorted(p)) for p in tree.pairs} - {tuple(sorted(p)) for p in kept}
print(f"kept {len(kept)} links, dropped {sorted(dropped) or 'nothing'}")

ports = port_map({x: topo.neighbors(x) for x in topo.nodes})
entries = emit_flow_entries(info, ports, group=1, destinations=req.destinations)
print("\nflow entries (port 0 is the local host):")
for e in entries:
    tag = "  <- fork" if len(e.out_ports) > 1 else ""
    print(f"  switch {e.switch:2d}  in {str(e.in_port):>4s}  out {list(e.out_ports)}{tag}")

reached = replay_reachability(entries, ports, req.source)
print(f"\nreplaying the rules from the source reaches {sorted(reached)}")
print("\nJSON for the controller:")
print(dumps_entries(entries))
