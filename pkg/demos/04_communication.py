"""Account the communication cost of dense vs k-degree models on a core/verge cluster.

Run:  python3 demos/04_communication.py
"""
from kdegree import geosim, netcore as nc

spec = nc.reference_spec()
dense = nc.init_model(spec.dense(), nc.build_dense_mask(spec.dense()), kind="dense")
kdeg = nc.init_model(spec, nc.build_kdegree_mask(spec, 0), kind="kdegree")
plan = geosim.make_partition(spec)
print("section widths on layers 0..H*:", [plan.section_widths(h) for h in range(3)])

distances = [1.0, 2.0, 2.0, 3.0, 5.0]
for payload in geosim.PAYLOADS:
    policy = geosim.SyncPolicy(payload=payload)
    _, cd = geosim.simulate_run(dense, plan, policy, 10, distances)
    _, ck = geosim.simulate_run(kdeg, plan, policy, 10, distances)
    print(f"{payload:17s} dense {cd:14.0f}  k-degree {ck:12.0f}  ratio {cd / ck:6.3f}")

# Counting the whole model with the reported edge convention gives the 8x ratio.
policy = geosim.SyncPolicy(payload="full_model", convention="reported")
graph, cc = geosim.simulate_run(kdeg, plan, policy, 10, distances)
print(graph.ledger_csv())
print(geosim.cost_summary(graph, policy))
