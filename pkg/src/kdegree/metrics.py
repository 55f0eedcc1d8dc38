"""Convergence-speed metrics and CSV tables for dense vs k-degree runs."""
from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass, fields

#: published error rates (percent) per data size in 50K units: size, dense, k-degree
PUBLISHED_ERROR_RATES = (
    (1, 4.92, 7.71),
    (2, 4.46, 7.09),
    (3, 4.09, 6.61),
    (4, 3.77, 6.23),
    (5, 3.53, 5.92),
    (6, 3.38, 5.68),
    (7, 3.30, 5.45),
    (8, 3.15, 5.20),
    (9, 3.07, 4.96),
    (10, 2.95, 4.78),
)

#: published convergence speeds (dense, k-degree) and relative cost, same rows
PUBLISHED_SPEEDS = (
    (2.54, 1.14, 54.95),
    (1.85, 0.97, 47.48),
    (1.48, 0.85, 42.67),
    (1.25, 0.75, 39.45),
    (1.08, 0.68, 37.02),
    (0.95, 0.62, 34.73),
    (0.84, 0.57, 32.17),
    (0.76, 0.53, 29.90),
    (0.69, 0.50, 27.35),
    (0.64, 0.47, 25.98),
)

BASE_ERROR_RATE = 10.0
BASE_DATA_SIZE = 1


def convergence_speed(e0: float, ei: float, n0: float, ni: float) -> float:
    """Error-rate improvement ``e0 - ei`` discounted by ``n0 / (n0 + ni)``."""
    if n0 <= 0:
        raise ValueError("base data size must be positive")
    if ni < 0:
        raise ValueError("data size must be non-negative")
    return n0 / (n0 + ni) * (e0 - ei)


def relative_cost(cs_baseline: float, cs_proposal: float) -> float:
    """Percent by which the proposal's convergence speed falls short of the baseline's."""
    if cs_baseline <= 0:
        raise ValueError(f"baseline convergence speed must be positive, got {cs_baseline}")
    return 100.0 * (cs_baseline - cs_proposal) / cs_baseline


@dataclass
class RunMetrics:
    model: str
    data_size_units: int
    error_rate_percent: float
    cc: float
    cc_bytes: float = 0.0
    convergence_speed: float = 0.0
    relative_cost_percent: float = 0.0
    wall_time_seconds: float = 0.0

    def __post_init__(self):
        if self.data_size_units < 1:
            raise ValueError("data size must be a positive number of units")
        if not 0.0 <= self.error_rate_percent <= 100.0:
            raise ValueError(f"error rate {self.error_rate_percent} outside [0, 100]")
        if self.cc < 0:
            raise ValueError("communication cost cannot be negative")


METRIC_COLUMNS = tuple(f.name for f in fields(RunMetrics))


def fill_speeds(rows: list[RunMetrics], e0: float = BASE_ERROR_RATE, n0: float = BASE_DATA_SIZE,
                baseline: str = "dense") -> None:
    """Set convergence speed on every row and relative cost against ``baseline``."""
    for r in rows:
        r.convergence_speed = convergence_speed(e0, r.error_rate_percent, n0, r.data_size_units)
    base = {r.data_size_units: r.convergence_speed for r in rows if r.model == baseline}
    for r in rows:
        cs = base.get(r.data_size_units)
        if r.model == baseline or cs is None or cs <= 0:
            r.relative_cost_percent = 0.0
        else:
            r.relative_cost_percent = relative_cost(cs, r.convergence_speed)


def _fmt(v):
    return repr(v) if isinstance(v, float) else str(v)


def metrics_csv(rows, include_wall_time: bool = True) -> str:
    cols = [c for c in METRIC_COLUMNS if include_wall_time or c != "wall_time_seconds"]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in rows:
        d = asdict(r)
        w.writerow([_fmt(d[c]) for c in cols])
    return buf.getvalue()


def read_metrics_csv(text: str) -> list[RunMetrics]:
    out = []
    for row in csv.DictReader(io.StringIO(text)):
        out.append(RunMetrics(
            model=row["model"],
            data_size_units=int(row["data_size_units"]),
            error_rate_percent=float(row["error_rate_percent"]),
            cc=float(row["cc"]),
            cc_bytes=float(row.get("cc_bytes") or 0.0),
            convergence_speed=float(row.get("convergence_speed") or 0.0),
            relative_cost_percent=float(row.get("relative_cost_percent") or 0.0),
            wall_time_seconds=float(row.get("wall_time_seconds") or 0.0),
        ))
    return out


def _paired(rows, baseline="dense", proposal="kdegree"):
    by = {}
    for r in rows:
        by.setdefault(r.data_size_units, {})[r.model] = r
    for size in sorted(by):
        yield size, by[size].get(baseline), by[size].get(proposal)


def emit_table(rows: list[RunMetrics], style: str) -> str:
    """CSV in the layout of the communication-cost (``table1``) or convergence (``table3``) table.

    Ratios and speeds are computed from the unrounded values; speeds are
    shown with two decimals, relative cost with two decimals of a percent.
    """
    if not rows:
        raise ValueError("no metrics to tabulate")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if style == "table1":
        w.writerow(["data_size", "cc_dense", "cc_kdegree", "improvement"])
        for size, d, k in _paired(rows):
            ratio = d.cc / k.cc if d and k and k.cc > 0 else float("nan")
            w.writerow([size, _fmt(d.cc) if d else "", _fmt(k.cc) if k else "", f"{ratio:.1f}"])
    elif style == "table3":
        w.writerow(["data_size", "error_dense", "error_kdegree", "cs_dense", "cs_kdegree",
                    "relative_cost"])
        for size, d, k in _paired(rows):
            cs_d = convergence_speed(BASE_ERROR_RATE, d.error_rate_percent, BASE_DATA_SIZE, size) if d else None
            cs_k = convergence_speed(BASE_ERROR_RATE, k.error_rate_percent, BASE_DATA_SIZE, size) if k else None
            rel = relative_cost(cs_d, cs_k) if cs_d and cs_k is not None and cs_d > 0 else None
            w.writerow([
                size,
                f"{d.error_rate_percent:.2f}" if d else "",
                f"{k.error_rate_percent:.2f}" if k else "",
                f"{cs_d:.2f}" if cs_d is not None else "",
                f"{cs_k:.2f}" if cs_k is not None else "",
                f"{rel:.2f}" if rel is not None else "",
            ])
    elif style == "fig3":
        w.writerow(["data_size", "model", "error_rate_percent"])
        for r in sorted(rows, key=lambda r: (r.data_size_units, r.model)):
            w.writerow([r.data_size_units, r.model, _fmt(r.error_rate_percent)])
    else:
        raise ValueError(f"unknown table style {style!r}")
    return buf.getvalue()


def published_rows() -> list[RunMetrics]:
    """The published error-rate columns as metric rows (no cost data)."""
    rows = []
    for size, e_dense, e_k in PUBLISHED_ERROR_RATES:
        rows.append(RunMetrics("dense", size, e_dense, 0.0))
        rows.append(RunMetrics("kdegree", size, e_k, 0.0))
    fill_speeds(rows)
    return rows


def read_error_rates(text: str) -> list[RunMetrics]:
    """Rows from a ``data_size,error_dense,error_kdegree`` CSV."""
    rows = []
    for row in csv.DictReader(io.StringIO(text)):
        size = int(row["data_size"])
        rows.append(RunMetrics("dense", size, float(row["error_dense"]), 0.0))
        rows.append(RunMetrics("kdegree", size, float(row["error_kdegree"]), 0.0))
    fill_speeds(rows)
    return rows
