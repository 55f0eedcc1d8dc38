"""k-degree layer-wise sparse networks."""
