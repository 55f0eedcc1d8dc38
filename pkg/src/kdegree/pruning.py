"""Degree-constrained pruning of layer pairs.

Each pair ``(h, h + 1)`` is treated as an RBM.  Rounds alternate between one
epoch of contrastive divergence and a screening pass: every surviving edge
with ``|w|`` below a threshold is a candidate, its removal is scored by the
change in mean reconstruction error, and it is deleted with probability
``min(1, exp(-delta / error))``.  Neurons that reach their target out-degree
are frozen.  Whatever is still in excess after ``max_rounds`` is cut by
magnitude.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .learning import TrainConfig, cd_epoch, pair_reconstruction_error, propagate_up
from .netcore import Model, TopologySpec, section_mask, sigmoid


class InfeasiblePruningError(ValueError):
    """A neuron has fewer edges than its target degree; edges never regrow."""


class LayerwiseConstraintError(ValueError):
    """Edge totals increase from one layer pair to the next."""


@dataclass(frozen=True)
class PruneConfig:
    weight_threshold: float = 0.05
    eval_subset_size: int = 64
    max_rounds: int = 10
    seed: int = 0

    def __post_init__(self):
        if not self.weight_threshold > 0:
            raise ValueError("weight_threshold must be positive")
        if self.eval_subset_size < 1:
            raise ValueError("eval_subset_size must be positive")
        if self.max_rounds < 0:
            raise ValueError("max_rounds must be non-negative")


def deletion_probability(delta_er: float, er: float) -> float:
    """``min(1, exp(-delta_er / er))``; removals that do not hurt are always taken."""
    if not er > 0:
        raise ValueError(f"reference reconstruction error must be positive, got {er}")
    x = -delta_er / er
    if x >= 0:
        return 1.0
    return math.exp(x)


def removal_deltas(W, b, c, visible, rows, cols, chunk_elems=4_000_000):
    """Change in mean reconstruction error when each edge ``(rows[t], cols[t])`` is cut.

    ``W`` must already be masked.  Removing ``w_ij`` shifts hidden unit j by
    ``sigmoid(z_j - v_i w_ij) - sigmoid(z_j)`` and every visible
    pre-activation by that shift times ``W[:, j]``, except visible unit i,
    which also loses its own ``h_j w_ij`` term.  Evaluated exactly, in chunks.
    """
    v = np.asarray(visible, dtype=np.float64)
    S, n_v = v.shape
    z = v @ W + b
    hid = sigmoid(z)
    a = hid @ W.T + c
    base = 0.5 * np.sum((sigmoid(a) - v) ** 2, axis=1)  # per sample
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    out = np.empty(len(rows))
    step = max(1, chunk_elems // max(1, S * n_v))
    for start in range(0, len(rows), step):
        I = rows[start:start + step]
        J = cols[start:start + step]
        w = W[I, J]                                # (C,)
        h_old = hid[:, J]                          # (S, C)
        h_new = sigmoid(z[:, J] - v[:, I] * w)     # (S, C)
        shift = h_new - h_old
        a_new = a[:, None, :] + shift[:, :, None] * W[:, J].T[None, :, :]
        C = len(I)
        a_new[:, np.arange(C), I] -= h_new * w     # the cut edge itself
        err = 0.5 * np.sum((sigmoid(a_new) - v[:, None, :]) ** 2, axis=2)  # (S, C)
        out[start:start + C] = (err - base[:, None]).mean(axis=0)
    return out


class AuditLog:
    """Collects one row per screened edge."""

    header = ("round", "layer_pair", "src", "dst", "abs_weight", "delta_er",
              "probability", "deleted")

    def __init__(self):
        self.rows = []

    def add(self, *row):
        self.rows.append(row)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.header)
            for r in self.rows:
                w.writerow(r)


def force_prune_row(weights_row: np.ndarray, mask_row: np.ndarray, k: int) -> np.ndarray:
    """Keep the ``k`` largest-``|w|`` edges of a row.

    Deletion goes by ascending ``|w|``; among equal magnitudes the lowest
    destination index is deleted first.
    """
    alive = np.flatnonzero(mask_row)
    excess = len(alive) - k
    out = mask_row.copy()
    if excess <= 0:
        return out
    mags = np.abs(weights_row[alive])
    order = np.lexsort((alive, mags))
    out[alive[order[:excess]]] = False
    return out


def prune_pair(model: Model, layer: int, data, cfg: PruneConfig, target_k: int,
               train_cfg: TrainConfig | None = None, audit: AuditLog | None = None) -> Model:
    """Cut pair ``(layer, layer + 1)`` down to out-degree ``target_k`` on every row.

    ``data`` is the representation of layer ``layer`` (raw inputs for
    ``layer == 0``).  ``train_cfg`` drives the one CD epoch run at the start
    of every round; pass ``None`` to skip the adjustment.
    """
    h = layer
    if not 0 <= h < model.spec.n_pairs:
        raise ValueError(f"layer pair {h} does not exist")
    data = np.asarray(data, dtype=np.float64)
    degrees = model.mask.out_degrees(h)
    short = np.flatnonzero(degrees < target_k)
    if len(short):
        raise InfeasiblePruningError(
            f"pair {h}: neuron {int(short[0])} has out-degree {int(degrees[short[0]])} "
            f"< target {target_k}"
        )
    model = model.apply_mask()
    mask = model.mask[h].copy()
    rng = np.random.default_rng(cfg.seed)
    n_eval = min(cfg.eval_subset_size, len(data))
    eval_rows = np.sort(rng.choice(len(data), size=n_eval, replace=False))
    eval_data = data[eval_rows]
    cd_rng = np.random.default_rng([cfg.seed, h])

    for rnd in range(1, cfg.max_rounds + 1):
        degrees = mask.sum(axis=1)
        if np.all(degrees == target_k):
            break
        model = model.with_mask(model.mask.replace(h, mask))
        if train_cfg is not None and len(data):
            cd_epoch(model, h + 1, data, train_cfg, cd_rng)
        W = model.masked_weight(h)
        active = degrees > target_k
        cand = mask & active[:, None] & (np.abs(W) < cfg.weight_threshold)
        rows, cols = np.nonzero(cand)
        if len(rows) == 0:
            continue
        order = np.lexsort((cols, rows, np.abs(W[rows, cols])))
        rows, cols = rows[order], cols[order]
        er = pair_reconstruction_error(model, h + 1, eval_data)
        deltas = removal_deltas(W, model.biases[h], model.visible_biases[h], eval_data, rows, cols)
        draws = rng.random(len(rows))
        for t in range(len(rows)):
            i, j = rows[t], cols[t]
            if degrees[i] <= target_k:
                continue  # frozen
            p = deletion_probability(deltas[t], er)
            deleted = bool(draws[t] < p)
            if deleted:
                mask[i, j] = False
                degrees[i] -= 1
            if audit is not None:
                audit.add(rnd, h, int(i), int(j), float(abs(W[i, j])), float(deltas[t]), p, int(deleted))

    W = model.weights[h]
    for i in np.flatnonzero(mask.sum(axis=1) > target_k):
        mask[i] = force_prune_row(W[i], mask[i], target_k)
    return model.with_mask(model.mask.replace(h, mask))


def run_procedure_one(model: Model, data, spec: TopologySpec, cfg: PruneConfig,
                      train_cfg: TrainConfig | None = None, audit: AuditLog | None = None) -> Model:
    """Build the k-degree layer-wise network from an over-connected model, bottom-up.

    ``spec`` supplies the degree schedule and the sections.  Cross-section
    edges of the first level are removed up front.  Each pair is adjusted
    and pruned on the mean activations of the already-pruned layers below;
    after every pair the total out-degree must not exceed that of the pair
    before it.
    """
    if model.spec.layer_widths != spec.layer_widths:
        raise ValueError(
            f"model widths {model.spec.layer_widths} do not match spec {spec.layer_widths}"
        )
    data = np.asarray(data, dtype=np.float64)
    model = model.with_mask(model.mask.intersect(section_mask(spec)))
    model.spec = spec
    rep = data
    totals = []
    for h in range(spec.n_pairs):
        if train_cfg is not None and len(rep):
            rng = np.random.default_rng([train_cfg.seed, 7919, h])
            cd_epoch(model, h + 1, rep, train_cfg, rng)
            model = model.apply_mask()
        model = prune_pair(model, h, rep, cfg, spec.degree_schedule[h], train_cfg, audit)
        total = int(model.mask.out_degrees(h).sum())
        if totals and total > totals[-1]:
            raise LayerwiseConstraintError(
                f"pair {h} keeps {total} edges, more than the {totals[-1]} of pair {h - 1}"
            )
        totals.append(total)
        if h + 1 < spec.n_pairs:
            rep = propagate_up(model, h + 1, rep)
    model.kind = "kdegree"
    return model
