"""From port counters to an NLI snapshot.

A controller never sees link state directly. It polls cumulative port
counters twice, times a pair of probes, and derives throughput, residual
bandwidth, loss and one-way delay from the differences. This script walks
one link through that arithmetic, then lets the traffic simulator do the
same for every link of the bundled topology.

    python demos/01_link_measurement.py
"""
import numpy as np

from mcast_rl.topology import (PortCounters, ProbeTimings, default_topology, generate_snapshots,
                               generate_traffic_matrices, measure_link)

# Two polls of the ports at either end of a 20 Mbps link, two seconds apart.
# Port i moved 2.5 MB in total; 1000 of its packets left, 990 arrived at j.
before = (PortCounters(tx_bytes=0, rx_bytes=0, tx_packets=0, rx_packets=0, duration_s=10.0),
          PortCounters(tx_bytes=0, rx_bytes=0, tx_packets=0, rx_packets=0, duration_s=10.0))
after = (PortCounters(tx_bytes=1.5e6, rx_bytes=1.0e6, tx_packets=1000, rx_packets=600, duration_s=12.0),
         PortCounters(tx_bytes=1.0e6, rx_bytes=1.5e6, tx_packets=600, rx_packets=990, duration_s=12.0))
# LLDP round trips through the controller, minus the controller's own echo latency.
probes = ProbeTimings(d_lldp1=9.0, d_lldp2=8.0, d_echo1=2.0, d_echo2=3.0)

bw_u, bw_ij, loss, delay = measure_link(before, after, probes, capacity_mbps=20.0)
print("single link")
print(f"  used      {bw_u:6.2f} Mbps   (2.5 MB over 2 s)")
print(f"  residual  {bw_ij:6.2f} Mbps")
print(f"  loss      {loss:6.3f}        (10 of 1000 packets i -> j)")
print(f"  delay     {delay:6.2f} ms")

# The simulator routes a random traffic matrix over shortest hop paths,
# synthesizes counters for each link and feeds them through the same formulas.
topo = default_topology()
snaps = generate_snapshots(topo, generate_traffic_matrices(topo.n, 4, seed=7), seed=7)
print(f"\n{topo.n}-node / {topo.m}-link topology, {len(snaps)} snapshots")
for snap in snaps:
    bw, dl, ls = (snap.edge_values(topo, k) for k in ("bw", "delay", "loss"))
    print(f"  t={snap.timestamp_index}: residual bw {bw.min():5.2f}..{bw.max():5.2f} Mbps, "
          f"delay {dl.min():5.2f}..{dl.max():5.2f} ms, mean loss {ls.mean():.4f}")

# The agent sees min-max normalized copies; each metric spans exactly [0, 1].
norm = snaps[0].edge_values(topo, "bw", normalized=True)
print(f"\nnormalized bw of snapshot 0: min {norm.min():.1f}, max {norm.max():.1f}, "
      f"median {np.median(norm):.3f}")
