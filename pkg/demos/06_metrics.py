"""Recompute the convergence-speed table from published error rates.

Run:  python3 demos/06_metrics.py
"""
from kdegree import metrics

rows = metrics.published_rows()
print(metrics.emit_table(rows, "table3"))
for (size, *_), (cs_d, cs_k, rel) in zip(metrics.PUBLISHED_ERROR_RATES, metrics.PUBLISHED_SPEEDS):
    k = next(r for r in rows if r.model == "kdegree" and r.data_size_units == size)
    print(f"size {size:2d}: relative cost {k.relative_cost_percent:6.2f}% (published {rel:.2f}%)")
