"""Two-level core/verge cluster simulation with communication-cost accounting.

The cluster is a tree: machine 0 is the core, machines ``1..M`` are verge
machines, each linked only to the core.  Every link carries a distance and
a cumulative flow measured in parameters; the communication cost is the
sum over links of distance times flow.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .netcore import Model, TopologySpec, paper_edge_count, section_bounds, section_ids

CORE = 0
PAYLOADS = ("verge_params_up", "core_params_down", "both", "full_model")

NOT_REPRODUCIBLE_NOTE = (
    "note: absolute costs depend on link distances and the synchronisation "
    "schedule; only ratios and linear scaling are meaningful"
)


@dataclass(frozen=True)
class Link:
    verge: int
    distance: float
    flow: float = 0.0

    @property
    def contribution(self) -> float:
        return self.distance * self.flow


@dataclass(frozen=True)
class ClusterGraph:
    """Vertices are machine ids with a role; links join each verge to the core."""

    roles: dict
    links: tuple[Link, ...]

    @classmethod
    def two_level(cls, distances) -> "ClusterGraph":
        distances = [float(d) for d in distances]
        if not distances:
            raise ValueError("a cluster needs at least one verge machine")
        for d in distances:
            if not (np.isfinite(d) and d >= 0):
                raise ValueError(f"distances must be finite and non-negative, got {d}")
        roles = {CORE: "core"}
        roles.update({m: "verge" for m in range(1, len(distances) + 1)})
        links = tuple(Link(m, d) for m, d in enumerate(distances, 1))
        return cls(roles, links)

    @property
    def section_count(self) -> int:
        return len(self.links)

    def add_flows(self, flows) -> "ClusterGraph":
        flows = list(flows)
        if len(flows) != len(self.links):
            raise ValueError(f"{len(flows)} flows for {len(self.links)} links")
        if any(f < 0 for f in flows):
            raise ValueError("flows only accumulate")
        return replace(
            self, links=tuple(replace(l, flow=l.flow + f) for l, f in zip(self.links, flows))
        )

    def scaled_distances(self, factor: float) -> "ClusterGraph":
        return replace(self, links=tuple(replace(l, distance=l.distance * factor) for l in self.links))

    def ledger_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["link", "ed", "ef", "contribution"])
        for l in self.links:
            w.writerow([f"{CORE}-{l.verge}", repr(l.distance), repr(l.flow), repr(l.contribution)])
        return buf.getvalue()


def communication_cost(graph: ClusterGraph) -> float:
    """Sum over links of distance times flow."""
    return float(sum(l.distance * l.flow for l in graph.links))


def tree_communication_cost(distances, flows) -> float:
    return float(np.dot(np.asarray(distances, dtype=np.float64), np.asarray(flows, dtype=np.float64)))


def read_distances(path, section_count: int | None = None) -> list[float]:
    """Read ``machine_id distance`` lines (verge ids 1..M) into a distance list."""
    found = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ValueError(f"{path}:{lineno}: expected 'machine_id distance'")
        mid, dist = int(parts[0]), float(parts[1])
        if mid < 1:
            raise ValueError(f"{path}:{lineno}: verge machine ids start at 1")
        if mid in found:
            raise ValueError(f"{path}:{lineno}: duplicate machine {mid}")
        found[mid] = dist
    m = section_count if section_count is not None else max(found, default=0)
    missing = [i for i in range(1, m + 1) if i not in found]
    if missing or len(found) != m:
        raise ValueError(f"{path}: need distances for machines 1..{m}, missing {missing}")
    return [found[i] for i in range(1, m + 1)]


@dataclass(frozen=True)
class PartitionPlan:
    """Sections of the first level and the machine each layer lives on.

    ``sections[h]`` lists the ``[start, stop)`` block of every section on
    layer ``h`` for ``h <= H*``; section ``m`` (1-based) lives on verge
    machine ``m``, layers above ``H*`` on the core.
    """

    partition_layer: int
    section_count: int
    layer_widths: tuple[int, ...]
    sections: dict = field(default_factory=dict)

    def section_widths(self, layer: int) -> list[int]:
        return [b - a for a, b in self.sections[layer]]

    def assignment(self, layer: int) -> np.ndarray:
        """1-based section id of every neuron of a first-level layer."""
        return section_ids(self.layer_widths[layer], self.section_count) + 1

    def placement(self, layer: int) -> str:
        return "verge" if layer <= self.partition_layer else "core"


def make_partition(spec: TopologySpec) -> PartitionPlan:
    """Contiguous sections for layers ``0..H*``; the first ``n % M`` blocks are one wider."""
    sections = {}
    for h in range(spec.partition_layer + 1):
        try:
            sections[h] = section_bounds(spec.layer_widths[h], spec.section_count)
        except ValueError:
            raise ValueError(
                f"infeasible partition: {spec.section_count} sections on layer {h} "
                f"of width {spec.layer_widths[h]}"
            ) from None
    return PartitionPlan(spec.partition_layer, spec.section_count, spec.layer_widths, sections)


@dataclass(frozen=True)
class SyncPolicy:
    rounds_per_epoch: int = 1
    payload: str = "verge_params_up"
    bytes_per_parameter: float = 8.0
    convention: str = "mask"

    def __post_init__(self):
        if self.rounds_per_epoch < 0:
            raise ValueError("rounds_per_epoch must be non-negative")
        if self.payload not in PAYLOADS:
            raise ValueError(f"payload must be one of {PAYLOADS}, got {self.payload!r}")
        if not self.bytes_per_parameter > 0:
            raise ValueError("bytes_per_parameter must be positive")
        if self.convention not in ("mask", "reported"):
            raise ValueError("convention must be 'mask' or 'reported'")
        if self.convention == "reported" and self.payload != "full_model":
            raise ValueError("the reported counting convention only applies to full_model payloads")


def section_parameter_counts(model: Model, plan: PartitionPlan) -> list[int]:
    """First-level parameters held by each verge machine.

    Section m owns the mask-true weights entering its neurons on layers
    ``1..H*`` and those neurons' biases.
    """
    counts = [0] * plan.section_count
    for h in range(plan.partition_layer):
        incoming = model.mask.in_degrees(h)
        for m, (a, b) in enumerate(plan.sections[h + 1]):
            counts[m] += int(incoming[a:b].sum()) + (b - a)
    return counts


def core_parameter_count(model: Model, plan: PartitionPlan) -> int:
    """Weights of pairs ``h >= H*`` plus biases of layers above ``H*``."""
    counts = model.mask.edge_counts()
    widths = model.spec.layer_widths
    return sum(counts[plan.partition_layer:]) + sum(widths[plan.partition_layer + 1:])


def full_model_count(model: Model, convention: str = "mask") -> int:
    if convention == "mask":
        return model.parameter_count()
    # reporting convention: dense pairs count n_h * (n_{h+1} + 1), no biases
    if model.kind == "dense":
        return sum(paper_edge_count(model.spec, "dense"))
    return sum(model.mask.edge_counts())


def sync_flows(model: Model, plan: PartitionPlan, policy: SyncPolicy) -> list[int]:
    """Parameters added to each verge link by one synchronisation round."""
    M = plan.section_count
    if policy.payload == "full_model":
        return [full_model_count(model, policy.convention)] * M
    up = section_parameter_counts(model, plan)
    down = [core_parameter_count(model, plan)] * M
    if policy.payload == "verge_params_up":
        return up
    if policy.payload == "core_params_down":
        return down
    return [u + d for u, d in zip(up, down)]


def record_sync(graph: ClusterGraph, model: Model, plan: PartitionPlan, policy: SyncPolicy,
                rounds: int | None = None) -> ClusterGraph:
    """Account ``rounds`` synchronisations (default: ``policy.rounds_per_epoch``)."""
    if graph.section_count != plan.section_count:
        raise ValueError(f"{graph.section_count} links but {plan.section_count} sections")
    if model.spec.layer_widths != plan.layer_widths:
        raise ValueError("model and partition plan disagree on layer widths")
    n = policy.rounds_per_epoch if rounds is None else rounds
    if n == 0:
        return graph
    return graph.add_flows([n * f for f in sync_flows(model, plan, policy)])


def simulate_run(model: Model, plan: PartitionPlan, policy: SyncPolicy, epochs: int,
                 distances=None):
    """Run ``epochs`` epochs of synchronisation on a fresh two-level cluster.

    Returns ``(graph, cc)``.  Distances default to 1 for every link.
    """
    if epochs < 0:
        raise ValueError("epochs must be non-negative")
    if distances is None:
        distances = [1.0] * plan.section_count
    if len(distances) != plan.section_count:
        raise ValueError(f"need {plan.section_count} distances, got {len(distances)}")
    graph = ClusterGraph.two_level(distances)
    graph = record_sync(graph, model, plan, policy, rounds=policy.rounds_per_epoch * epochs)
    return graph, communication_cost(graph)


def cost_summary(graph: ClusterGraph, policy: SyncPolicy) -> str:
    cc = communication_cost(graph)
    return (
        f"communication cost: {cc:.6g} parameter-distance units, "
        f"{cc * policy.bytes_per_parameter:.6g} byte-distance units\n{NOT_REPRODUCIBLE_NOTE}\n"
    )
