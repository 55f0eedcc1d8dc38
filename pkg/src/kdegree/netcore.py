"""Layer-wise network topology, edge masks and masked evaluation.

A network has ``H + 2`` layers: layer 0 is the input, layer ``H + 1`` the
output.  Connections only run between adjacent layers, so the connectivity
of a network is one boolean matrix per adjacent pair ``(h, h + 1)`` with
shape ``(n_h, n_{h+1})``.

Layers ``0 .. H*`` (the partition layer) form the first level, which is cut
horizontally into ``M`` contiguous sections; pairs ``h < H*`` may only
connect neurons inside the same section.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


class TopologyError(ValueError):
    """Invalid topology description."""


class InfeasibleDegreeError(TopologyError):
    """A degree cannot be realised with the targets available."""


def section_bounds(width: int, sections: int) -> list[tuple[int, int]]:
    """Contiguous ``[start, stop)`` blocks for ``sections`` groups of ``width``.

    The first ``width % sections`` blocks are one element wider.

    >>> section_bounds(10, 5)
    [(0, 2), (2, 4), (4, 6), (6, 8), (8, 10)]
    >>> [b - a for a, b in section_bounds(784, 5)]
    [157, 157, 157, 157, 156]
    """
    if sections < 1:
        raise TopologyError(f"section count must be >= 1, got {sections}")
    if sections > width:
        raise TopologyError(
            f"cannot cut a layer of width {width} into {sections} sections"
        )
    base, extra = divmod(width, sections)
    bounds = []
    start = 0
    for m in range(sections):
        stop = start + base + (1 if m < extra else 0)
        bounds.append((start, stop))
        start = stop
    return bounds


def section_ids(width: int, sections: int) -> np.ndarray:
    """Section index (0-based) of every neuron in a layer."""
    ids = np.empty(width, dtype=np.int64)
    for m, (a, b) in enumerate(section_bounds(width, sections)):
        ids[a:b] = m
    return ids


def _int_tuple(values, name):
    try:
        out = tuple(int(v) for v in values)
    except TypeError:
        raise TopologyError(f"{name} must be a sequence of integers") from None
    if any(o != v for o, v in zip(out, values)):
        raise TopologyError(f"{name} must contain integers, got {values!r}")
    return out


@dataclass(frozen=True)
class TopologySpec:
    """Blueprint of a layer-wise network.

    ``degree_schedule[h]`` is the out-degree of every neuron on layer ``h``
    towards layer ``h + 1``.  When omitted it defaults to the full fan-out,
    i.e. a dense network.  ``partition_layer`` defaults to 1 (or 0 for a
    network with no hidden layer).

    With ``layerwise=True`` the schedule must keep the per-pair edge totals
    ``n_h * k_h`` non-increasing towards the output and ``k_{h+1} <= k_h``
    for every pair but the last one.
    """

    layer_widths: tuple[int, ...]
    degree_schedule: tuple[int, ...] | None = None
    partition_layer: int | None = None
    section_count: int = 1
    layerwise: bool = True

    def __post_init__(self):
        widths = _int_tuple(self.layer_widths, "layer_widths")
        object.__setattr__(self, "layer_widths", widths)
        if len(widths) < 2:
            raise TopologyError("a network needs at least an input and an output layer")
        if any(w < 1 for w in widths):
            raise TopologyError(f"layer widths must be positive, got {widths}")

        if self.degree_schedule is None:
            degrees = widths[1:]
        else:
            degrees = _int_tuple(self.degree_schedule, "degree_schedule")
        object.__setattr__(self, "degree_schedule", degrees)
        if len(degrees) != len(widths) - 1:
            raise TopologyError(
                f"degree schedule has {len(degrees)} entries, expected {len(widths) - 1}"
            )
        for h, k in enumerate(degrees):
            if k < 1:
                raise TopologyError(f"degree k[{h}] must be positive, got {k}")
            if k > widths[h + 1]:
                raise InfeasibleDegreeError(
                    f"degree k[{h}]={k} exceeds the {widths[h + 1]} neurons of layer {h + 1}"
                )

        H = len(widths) - 2
        hstar = self.partition_layer
        if hstar is None:
            hstar = min(1, H)
        hstar = int(hstar)
        object.__setattr__(self, "partition_layer", hstar)
        if H >= 1 and not 1 <= hstar <= H:
            raise TopologyError(f"partition layer must lie in [1, {H}], got {hstar}")
        if H == 0 and hstar != 0:
            raise TopologyError("a network without hidden layers has partition layer 0")

        if self.section_count < 1:
            raise TopologyError(f"section count must be positive, got {self.section_count}")
        for h in range(hstar + 1):
            if self.section_count > widths[h]:
                raise TopologyError(
                    f"{self.section_count} sections do not fit layer {h} of width {widths[h]}"
                )

        if self.layerwise:
            totals = self.kdegree_edge_counts()
            for h in range(len(totals) - 1):
                if totals[h + 1] > totals[h]:
                    raise TopologyError(
                        f"layer-wise constraint violated: pair {h + 1} has {totals[h + 1]} "
                        f"edges, pair {h} only {totals[h]}"
                    )
            for h in range(len(degrees) - 2):
                if degrees[h + 1] > degrees[h]:
                    raise TopologyError(
                        f"degree schedule must be non-increasing: k[{h + 1}]={degrees[h + 1]} "
                        f"> k[{h}]={degrees[h]}"
                    )

    @property
    def hidden_count(self) -> int:
        return len(self.layer_widths) - 2

    @property
    def n_pairs(self) -> int:
        return len(self.layer_widths) - 1

    @property
    def vertex_count(self) -> int:
        return sum(self.layer_widths)

    def is_dense(self) -> bool:
        return self.degree_schedule == self.layer_widths[1:]

    def dense(self) -> "TopologySpec":
        """The same widths and partition with full fan-out."""
        return TopologySpec(
            self.layer_widths,
            None,
            self.partition_layer,
            self.section_count,
            layerwise=False,
        )

    def kdegree_edge_counts(self) -> list[int]:
        return [n * k for n, k in zip(self.layer_widths, self.degree_schedule)]

    def sectioned_pairs(self) -> range:
        """Pair indices subject to the hard section constraint."""
        return range(self.partition_layer if self.section_count > 1 else 0)

    def to_text(self) -> str:
        lines = [
            "layer_widths=" + ",".join(map(str, self.layer_widths)),
            "degree_schedule=" + ",".join(map(str, self.degree_schedule)),
            f"partition_layer={self.partition_layer}",
            f"section_count={self.section_count}",
            f"layerwise={str(self.layerwise).lower()}",
        ]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "TopologySpec":
        from .config import parse_key_values

        return cls.from_mapping(parse_key_values(text))

    @classmethod
    def from_mapping(cls, values) -> "TopologySpec":
        def ints(s):
            return tuple(int(v) for v in str(s).split(",") if v.strip())

        if "layer_widths" not in values:
            raise TopologyError("missing key 'layer_widths'")
        degrees = values.get("degree_schedule")
        hstar = values.get("partition_layer")
        layerwise = str(values.get("layerwise", "true")).strip().lower()
        if layerwise not in ("true", "false"):
            raise TopologyError(f"layerwise must be true or false, got {layerwise!r}")
        return cls(
            ints(values["layer_widths"]),
            ints(degrees) if degrees else None,
            int(hstar) if hstar is not None else None,
            int(values.get("section_count", 1)),
            layerwise == "true",
        )


REFERENCE_WIDTHS = (784, 580, 450, 310, 160, 75, 10)
REFERENCE_DEGREES = (50, 50, 50, 50, 50, 10)


def reference_spec() -> TopologySpec:
    """784-580-450-310-160-75-10 with k=50 (k=10 into the output), M=5, H*=2."""
    return TopologySpec(REFERENCE_WIDTHS, REFERENCE_DEGREES, partition_layer=2, section_count=5)


@dataclass(frozen=True, eq=False)
class EdgeMask:
    """One boolean ``(n_h, n_{h+1})`` matrix per adjacent layer pair."""

    pairs: tuple[np.ndarray, ...]

    def __post_init__(self):
        pairs = tuple(np.array(p, dtype=bool) for p in self.pairs)
        for h in range(len(pairs) - 1):
            if pairs[h].shape[1] != pairs[h + 1].shape[0]:
                raise TopologyError(f"mask pairs {h} and {h + 1} disagree on layer width")
        for p in pairs:
            p.setflags(write=False)
        object.__setattr__(self, "pairs", pairs)

    def __len__(self):
        return len(self.pairs)

    def __getitem__(self, h):
        return self.pairs[h]

    @property
    def layer_widths(self) -> tuple[int, ...]:
        return (self.pairs[0].shape[0],) + tuple(p.shape[1] for p in self.pairs)

    def edge_counts(self) -> list[int]:
        return [int(p.sum()) for p in self.pairs]

    def out_degrees(self, h: int) -> np.ndarray:
        return self.pairs[h].sum(axis=1)

    def in_degrees(self, h: int) -> np.ndarray:
        return self.pairs[h].sum(axis=0)

    def replace(self, h: int, pair: np.ndarray) -> "EdgeMask":
        pairs = list(self.pairs)
        pairs[h] = pair
        return EdgeMask(tuple(pairs))

    def intersect(self, other: "EdgeMask") -> "EdgeMask":
        return EdgeMask(tuple(a & b for a, b in zip(self.pairs, other.pairs)))

    def is_subset_of(self, other: "EdgeMask") -> bool:
        return all(not np.any(a & ~b) for a, b in zip(self.pairs, other.pairs))

    def equals(self, other: "EdgeMask") -> bool:
        return len(self) == len(other) and all(
            a.shape == b.shape and np.array_equal(a, b) for a, b in zip(self.pairs, other.pairs)
        )

    def edges(self) -> Iterable[tuple[int, int, int]]:
        for h, p in enumerate(self.pairs):
            for i, j in zip(*np.nonzero(p)):
                yield h, int(i), int(j)

    def write_edge_list(self, path) -> None:
        """Write ``src_layer src_index dst_index`` lines, one edge each."""
        with open(path, "w") as fh:
            fh.write(f"# layer_widths {','.join(map(str, self.layer_widths))}\n")
            for h, i, j in self.edges():
                fh.write(f"{h} {i} {j}\n")

    @classmethod
    def read_edge_list(cls, path, layer_widths: Sequence[int] | None = None) -> "EdgeMask":
        widths = None if layer_widths is None else list(layer_widths)
        edges = []
        for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                head = line[1:].split()
                if widths is None and len(head) == 2 and head[0] == "layer_widths":
                    widths = [int(v) for v in head[1].split(",")]
                continue
            parts = line.split()
            if len(parts) != 3:
                raise TopologyError(f"{path}:{lineno}: expected 'src_layer src_index dst_index'")
            edges.append(tuple(int(v) for v in parts))
        if widths is None:
            raise TopologyError(f"{path}: layer widths unknown (no header, none given)")
        pairs = [np.zeros((widths[h], widths[h + 1]), dtype=bool) for h in range(len(widths) - 1)]
        for h, i, j in edges:
            pairs[h][i, j] = True
        return cls(tuple(pairs))


def section_mask(spec: TopologySpec) -> EdgeMask:
    """All-true mask except cross-section entries of the sectioned pairs."""
    pairs = []
    for h in range(spec.n_pairs):
        n_src, n_dst = spec.layer_widths[h], spec.layer_widths[h + 1]
        if h in spec.sectioned_pairs():
            src = section_ids(n_src, spec.section_count)
            dst = section_ids(n_dst, spec.section_count)
            pairs.append(src[:, None] == dst[None, :])
        else:
            pairs.append(np.ones((n_src, n_dst), dtype=bool))
    return EdgeMask(tuple(pairs))


def build_dense_mask(spec: TopologySpec, sectioned: bool = False) -> EdgeMask:
    """Fully connected adjacent layers, optionally cut into sections below H*."""
    if sectioned:
        return section_mask(spec)
    return EdgeMask(
        tuple(
            np.ones((spec.layer_widths[h], spec.layer_widths[h + 1]), dtype=bool)
            for h in range(spec.n_pairs)
        )
    )


def build_kdegree_mask(spec: TopologySpec, seed: int = 0) -> EdgeMask:
    """Random mask in which every neuron of layer h has exactly ``k_h`` targets.

    Targets are drawn uniformly without replacement; on sectioned pairs they
    are restricted to the source neuron's own section.
    """
    rng = np.random.default_rng(seed)
    pairs = []
    for h in range(spec.n_pairs):
        n_src, n_dst = spec.layer_widths[h], spec.layer_widths[h + 1]
        k = spec.degree_schedule[h]
        pair = np.zeros((n_src, n_dst), dtype=bool)
        if h in spec.sectioned_pairs():
            src_bounds = section_bounds(n_src, spec.section_count)
            dst_bounds = section_bounds(n_dst, spec.section_count)
            for m, ((sa, sb), (da, db)) in enumerate(zip(src_bounds, dst_bounds)):
                if k > db - da:
                    raise InfeasibleDegreeError(
                        f"layer {h}: degree {k} exceeds the {db - da} targets of "
                        f"section {m + 1} on layer {h + 1}"
                    )
                for i in range(sa, sb):
                    pair[i, da + rng.choice(db - da, size=k, replace=False)] = True
        else:
            for i in range(n_src):
                pair[i, rng.choice(n_dst, size=k, replace=False)] = True
        pairs.append(pair)
    return EdgeMask(tuple(pairs))


def paper_edge_count(spec: TopologySpec, kind: str) -> list[int]:
    """Per-pair edge counts in the reporting convention of the reference results.

    ``dense`` counts ``n_h * (n_{h+1} + 1)``, one more than the weight count
    per source neuron; ``kdegree`` counts ``n_h * k_h``.
    """
    widths = spec.layer_widths
    if kind == "dense":
        return [widths[h] * (widths[h + 1] + 1) for h in range(spec.n_pairs)]
    if kind == "kdegree":
        return spec.kdegree_edge_counts()
    raise ValueError(f"unknown edge-count kind {kind!r}")


def density(vertex_count: int, edge_count: int) -> float:
    """Density ``|E| / (|V| (|V| - 1))`` of a directed simple graph."""
    if vertex_count < 2:
        raise ValueError(f"density is undefined for {vertex_count} vertices")
    if edge_count < 0:
        raise ValueError("edge count must be non-negative")
    return edge_count / (vertex_count * (vertex_count - 1))


def mask_density(mask: EdgeMask) -> float:
    return density(sum(mask.layer_widths), sum(mask.edge_counts()))


def dense_density_limit(H: int) -> float:
    """Large-network density of a dense stack with ``H`` hidden layers."""
    if H < 0:
        raise ValueError("H must be non-negative")
    return (H + 1) / (H + 2) ** 2


def kdegree_edge_estimate(spec: TopologySpec, k: int) -> float:
    """Approximate edge total ``k |V| (H+1) / (H+2)`` for a uniform degree k."""
    H = spec.hidden_count
    return k * spec.vertex_count * (H + 1) / (H + 2)


def sigmoid(x):
    # split by sign so exp never overflows
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax(x):
    x = np.asarray(x, dtype=np.float64)
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


ACTIVATIONS = ("sigmoid", "identity")


@dataclass(eq=False)
class Model:
    """Masked weights and biases of a layer-wise network.

    ``weights[h]`` has shape ``(n_h, n_{h+1})``; ``biases[h]`` belongs to
    layer ``h + 1``; ``visible_biases[h]`` belongs to layer ``h`` and is only
    used when reconstructing layer ``h`` from layer ``h + 1``.

    ``activation="sigmoid"`` means logistic hidden units and a softmax
    output.  ``"identity"`` makes every layer linear (for analytic tests).
    Operations always read weights through the mask; training code keeps
    masked-out entries at exactly zero.
    """

    spec: TopologySpec
    mask: EdgeMask
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    visible_biases: list[np.ndarray]
    activation: str = "sigmoid"
    kind: str = "custom"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        widths = self.spec.layer_widths
        if self.mask.layer_widths != widths:
            raise TopologyError(f"mask widths {self.mask.layer_widths} do not match spec {widths}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        n = self.spec.n_pairs
        if not (len(self.weights) == len(self.biases) == len(self.visible_biases) == n):
            raise TopologyError(f"expected {n} weight matrices and bias vectors")
        self.weights = [np.asarray(w, dtype=np.float64) for w in self.weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in self.biases]
        self.visible_biases = [np.asarray(c, dtype=np.float64) for c in self.visible_biases]
        for h in range(n):
            if self.weights[h].shape != (widths[h], widths[h + 1]):
                raise TopologyError(f"weights[{h}] has shape {self.weights[h].shape}")
            if self.biases[h].shape != (widths[h + 1],):
                raise TopologyError(f"biases[{h}] has shape {self.biases[h].shape}")
            if self.visible_biases[h].shape != (widths[h],):
                raise TopologyError(f"visible_biases[{h}] has shape {self.visible_biases[h].shape}")

    def copy(self, **changes) -> "Model":
        fields = dict(
            spec=self.spec,
            mask=self.mask,
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            visible_biases=[c.copy() for c in self.visible_biases],
            activation=self.activation,
            kind=self.kind,
            meta=dict(self.meta),
        )
        fields.update(changes)
        return Model(**fields)

    def masked_weight(self, h: int) -> np.ndarray:
        return np.where(self.mask[h], self.weights[h], 0.0)

    def apply_mask(self) -> "Model":
        """Copy with every masked-out weight set to exactly zero."""
        return self.copy(weights=[self.masked_weight(h) for h in range(self.spec.n_pairs)])

    def with_mask(self, mask: EdgeMask) -> "Model":
        return Model(
            self.spec, mask, [w.copy() for w in self.weights], [b.copy() for b in self.biases],
            [c.copy() for c in self.visible_biases], self.activation, self.kind, dict(self.meta),
        ).apply_mask()

    def masked_out_is_zero(self) -> bool:
        return all(not np.any(w[~m]) for w, m in zip(self.weights, self.mask.pairs))

    def is_finite(self) -> bool:
        arrays = self.weights + self.biases + self.visible_biases
        return all(np.all(np.isfinite(a)) for a in arrays)

    def parameter_count(self) -> int:
        """Mask-true weights plus layer biases (reconstruction biases excluded)."""
        return sum(self.mask.edge_counts()) + sum(self.spec.layer_widths[1:])


def init_model(spec: TopologySpec, mask: EdgeMask, seed: int = 0, scale: float = 0.01,
               kind: str = "custom", activation: str = "sigmoid") -> Model:
    """Gaussian weights of standard deviation ``scale`` on the mask, zero biases."""
    rng = np.random.default_rng(seed)
    weights = []
    for h in range(spec.n_pairs):
        w = rng.normal(0.0, scale, size=mask[h].shape)
        weights.append(np.where(mask[h], w, 0.0))
    biases = [np.zeros(n) for n in spec.layer_widths[1:]]
    visible = [np.zeros(n) for n in spec.layer_widths[:-1]]
    return Model(spec, mask, weights, biases, visible, activation=activation, kind=kind)


def hidden_activation(model: Model, h: int, x: np.ndarray) -> np.ndarray:
    """Activation of layer ``h + 1`` from layer ``h`` as a logistic (RBM) unit."""
    z = x @ model.masked_weight(h) + model.biases[h]
    return z if model.activation == "identity" else sigmoid(z)


def forward(model: Model, x, weights: Sequence[np.ndarray] | None = None) -> list[np.ndarray]:
    """Activations of every layer for one input vector or a batch of rows.

    Element 0 is the input itself; the last element is the softmax output
    (or the linear output in identity mode).  ``weights`` lets a caller pass
    already-masked matrices it has computed anyway.
    """
    x = np.asarray(x, dtype=np.float64)
    n_in = model.spec.layer_widths[0]
    if x.shape[-1] != n_in or x.ndim not in (1, 2):
        raise ValueError(f"input has shape {x.shape}, expected (..., {n_in})")
    if weights is None:
        weights = [model.masked_weight(h) for h in range(model.spec.n_pairs)]
    acts = [x]
    last = model.spec.n_pairs - 1
    for h in range(model.spec.n_pairs):
        z = acts[-1] @ weights[h] + model.biases[h]
        if model.activation == "identity":
            acts.append(z)
        elif h == last:
            acts.append(softmax(z))
        else:
            acts.append(sigmoid(z))
    return acts


def reconstruct(model: Model, hidden, layer: int) -> np.ndarray:
    """Map activations of ``layer`` back onto ``layer - 1`` with tied weights."""
    if not 1 <= layer <= model.spec.n_pairs:
        raise ValueError(f"layer must lie in [1, {model.spec.n_pairs}], got {layer}")
    hidden = np.asarray(hidden, dtype=np.float64)
    width = model.spec.layer_widths[layer]
    if hidden.shape[-1] != width:
        raise ValueError(f"hidden vector has width {hidden.shape[-1]}, expected {width}")
    z = hidden @ model.masked_weight(layer - 1).T + model.visible_biases[layer - 1]
    return z if model.activation == "identity" else sigmoid(z)
