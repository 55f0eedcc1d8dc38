"""Build the dense and k-degree topologies of the MNIST network and compare them.

Run:  python3 demos/01_topology.py
"""
from kdegree import netcore as nc

spec = nc.reference_spec()
print("layer widths   ", spec.layer_widths)
print("degree schedule", spec.degree_schedule)

# The dense baseline connects every neuron to every neuron of the next layer.
dense = nc.build_dense_mask(spec.dense())
print("dense weights per pair    ", dense.edge_counts())
print("dense edges (paper count) ", nc.paper_edge_count(spec, "dense"))

# The k-degree network gives every neuron exactly k outgoing edges.  On the
# first two pairs those edges stay inside the neuron's own section.
mask = nc.build_kdegree_mask(spec, seed=0)
print("k-degree edges per pair   ", mask.edge_counts())
print("out-degrees on pair 0     ", sorted(set(mask.out_degrees(0).tolist())))
cross = mask[0] & ~nc.section_mask(spec)[0]
print("cross-section edges       ", int(cross.sum()))

# Density shrinks with width for fixed k, but has a floor for dense nets.
V = spec.vertex_count
print(f"density dense {nc.density(V, sum(nc.paper_edge_count(spec, 'dense'))):.4f}, "
      f"k-degree {nc.mask_density(mask):.4f}, dense limit {nc.dense_density_limit(5):.4f}")
for s in (1, 2, 4, 8):
    wide = nc.TopologySpec((32 * s,) * 4, (8, 8, 8))
    print(f"  k=8, width {32 * s:3d}: density {nc.mask_density(nc.build_kdegree_mask(wide, 0)):.5f}")
