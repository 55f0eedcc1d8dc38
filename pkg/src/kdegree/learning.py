"""Losses, RBM pre-training and supervised fine-tuning of masked networks.

Every update path multiplies its weight step by the edge mask, so entries
outside the mask stay exactly zero.
"""
from __future__ import annotations

import csv
import io
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .netcore import EdgeMask, Model, TopologySpec, forward, reconstruct, sigmoid

#: probability floor used inside the log of the NLL
NLL_FLOOR = 1e-12


class TrainingDivergedError(RuntimeError):
    """The loss became NaN or infinite."""


@dataclass(frozen=True)
class LossConfig:
    lambda1: float = 0.00001
    lambda2: float = 0.00009
    include_reconstruction: bool = False

    def __post_init__(self):
        for name in ("lambda1", "lambda2"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"{name} must be finite and >= 0, got {v}")


@dataclass(frozen=True)
class TrainConfig:
    cd_steps: int = 1
    learning_rate: float = 0.1
    epochs_pretrain: int = 5
    epochs_finetune: int = 20
    batch_size: int = 20
    seed: int = 0
    pretrain_learning_rate: float | None = None

    def __post_init__(self):
        if self.cd_steps < 1 or self.batch_size < 1:
            raise ValueError("cd_steps and batch_size must be positive")
        if self.epochs_pretrain < 0 or self.epochs_finetune < 0:
            raise ValueError("epoch counts must be non-negative")
        if not (self.learning_rate >= 0 and math.isfinite(self.learning_rate)):
            raise ValueError("learning_rate must be finite and non-negative")

    @property
    def cd_learning_rate(self) -> float:
        if self.pretrain_learning_rate is None:
            return self.learning_rate
        return self.pretrain_learning_rate


@dataclass(frozen=True, eq=False)
class LabeledBatch:
    inputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        x = np.atleast_2d(np.asarray(self.inputs, dtype=np.float64))
        y = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if x.shape[0] != y.shape[0]:
            raise ValueError(f"{x.shape[0]} inputs but {y.shape[0]} labels")
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "labels", y)

    def __len__(self):
        return len(self.labels)

    def check(self, spec: TopologySpec) -> None:
        if self.inputs.shape[1] != spec.layer_widths[0]:
            raise ValueError(
                f"inputs have {self.inputs.shape[1]} columns, network expects {spec.layer_widths[0]}"
            )
        n_out = spec.layer_widths[-1]
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= n_out):
            raise ValueError(f"labels must lie in [0, {n_out})")


def _half_sq(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    return 0.5 * float(np.sum((a - b) ** 2))


def training_error(y, target) -> float:
    """Half squared distance between an output and its one-hot target."""
    return _half_sq(y, target)


def reconstruction_error(xhat, x) -> float:
    return _half_sq(xhat, x)


@dataclass
class LossDiagnostics:
    clamped: int = 0


def nll(output_probs, label: int, diagnostics: LossDiagnostics | None = None) -> float:
    """Negative log-probability of ``label``.

    A probability below ``NLL_FLOOR`` is clamped to it and counted in
    ``diagnostics``.
    """
    p = np.asarray(output_probs, dtype=np.float64)
    if abs(p.sum() - 1.0) > 1e-6:
        raise ValueError(f"probabilities sum to {p.sum()}, not 1")
    q = p[label]
    if q < NLL_FLOOR:
        if diagnostics is not None:
            diagnostics.clamped += 1
        q = NLL_FLOOR
    return float(-np.log(q))


def batch_nll(probs: np.ndarray, labels: np.ndarray, diagnostics: LossDiagnostics | None = None):
    picked = probs[np.arange(len(labels)), labels]
    low = picked < NLL_FLOOR
    if diagnostics is not None:
        diagnostics.clamped += int(low.sum())
    return float(-np.sum(np.log(np.where(low, NLL_FLOOR, picked))))


def regularization(model: Model, cfg: LossConfig, weights=None) -> float:
    """``lambda1 * sum|w| + lambda2 * sum w^2`` over mask-true weights."""
    if weights is None:
        weights = [model.masked_weight(h) for h in range(model.spec.n_pairs)]
    l1 = sum(float(np.abs(w).sum()) for w in weights) if cfg.lambda1 else 0.0
    l2 = sum(float(np.vdot(w, w)) for w in weights) if cfg.lambda2 else 0.0
    return cfg.lambda1 * l1 + cfg.lambda2 * l2


def total_loss(model: Model, batch: LabeledBatch, cfg: LossConfig,
               diagnostics: LossDiagnostics | None = None) -> float:
    """NLL over the batch + first-layer reconstruction errors (optional) + L1/L2."""
    batch.check(model.spec)
    Ws = [model.masked_weight(h) for h in range(model.spec.n_pairs)]
    acts = forward(model, batch.inputs, Ws)
    loss = batch_nll(acts[-1], batch.labels, diagnostics)
    if cfg.include_reconstruction:
        xhat = reconstruct(model, acts[1], 1)
        loss += 0.5 * float(np.sum((xhat - batch.inputs) ** 2))
    return loss + regularization(model, cfg, Ws)


@dataclass
class Gradients:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    visible_biases: list[np.ndarray]


def loss_and_gradients(model: Model, batch: LabeledBatch, cfg: LossConfig):
    """``total_loss`` and its exact gradient; masked-out entries get zero gradient."""
    if model.activation != "sigmoid":
        raise ValueError("gradients are defined for the sigmoid/softmax network only")
    batch.check(model.spec)
    n_pairs = model.spec.n_pairs
    if cfg.include_reconstruction and n_pairs < 2:
        raise ValueError("the reconstruction term needs at least one hidden layer")
    x = batch.inputs
    Ws = [model.masked_weight(h) for h in range(n_pairs)]
    acts = forward(model, x, Ws)
    diag = LossDiagnostics()
    loss = batch_nll(acts[-1], batch.labels, diag)

    gw = [np.zeros_like(w) for w in model.weights]
    gb = [np.zeros_like(b) for b in model.biases]
    gc = [np.zeros_like(c) for c in model.visible_biases]

    delta = acts[-1].copy()
    delta[np.arange(len(batch)), batch.labels] -= 1.0
    if diag.clamped:
        # the clamped log is flat in the logits
        rows = acts[-1][np.arange(len(batch)), batch.labels] < NLL_FLOOR
        delta[rows] = 0.0

    extra_h1 = None
    if cfg.include_reconstruction:
        W0 = Ws[0]
        h1 = acts[1]
        xhat = reconstruct(model, h1, 1)
        loss += 0.5 * float(np.sum((xhat - x) ** 2))
        d_out = (xhat - x) * xhat * (1.0 - xhat)
        gw[0] += d_out.T @ h1
        gc[0] += d_out.sum(axis=0)
        # gradient flowing into h1 through the decoder
        extra_h1 = d_out @ W0

    for h in range(n_pairs - 1, -1, -1):
        gw[h] += acts[h].T @ delta
        gb[h] += delta.sum(axis=0)
        if h == 0:
            break
        back = delta @ Ws[h].T
        if h == 1 and extra_h1 is not None:
            back = back + extra_h1
        delta = back * acts[h] * (1.0 - acts[h])
    loss += regularization(model, cfg, Ws)
    for h in range(n_pairs):
        if cfg.lambda1:
            gw[h] += cfg.lambda1 * np.sign(Ws[h])
        if cfg.lambda2:
            gw[h] += (2.0 * cfg.lambda2) * Ws[h]
        gw[h] *= model.mask[h]
    return loss, Gradients(gw, gb, gc)


def numerical_gradients(model: Model, batch: LabeledBatch, cfg: LossConfig, step: float = 1e-5):
    """Central finite differences of ``total_loss`` over mask-true weights and all biases."""
    def f(m):
        return total_loss(m, batch, cfg)

    out_w, out_b, out_c = [], [], []
    for h in range(model.spec.n_pairs):
        gw = np.zeros_like(model.weights[h])
        for i, j in zip(*np.nonzero(model.mask[h])):
            plus = model.copy()
            plus.weights[h][i, j] += step
            minus = model.copy()
            minus.weights[h][i, j] -= step
            gw[i, j] = (f(plus) - f(minus)) / (2 * step)
        out_w.append(gw)
        for store, attr in ((out_b, "biases"), (out_c, "visible_biases")):
            vec = getattr(model, attr)[h]
            g = np.zeros_like(vec)
            for i in range(len(vec)):
                plus = model.copy()
                getattr(plus, attr)[h][i] += step
                minus = model.copy()
                getattr(minus, attr)[h][i] -= step
                g[i] = (f(plus) - f(minus)) / (2 * step)
            store.append(g)
    return Gradients(out_w, out_b, out_c)


# --- RBM pre-training -------------------------------------------------------


@dataclass
class CDUpdate:
    """Parameter steps for one contrastive-divergence mini-batch."""

    weights: np.ndarray
    hidden_biases: np.ndarray
    visible_biases: np.ndarray
    positive_hidden: np.ndarray


def rbm_cd_update(model: Model, layer: int, visible_batch, cfg: TrainConfig,
                  rng: np.random.Generator | None = None) -> CDUpdate:
    """CD-k step for the RBM formed by layers ``layer - 1`` (visible) and ``layer``.

    Hidden states are sampled, visible reconstructions use mean-field
    probabilities.  The returned steps already include the learning rate and
    are averaged over the batch.
    """
    h = layer - 1
    if not 0 <= h < model.spec.n_pairs:
        raise ValueError(f"layer must lie in [1, {model.spec.n_pairs}], got {layer}")
    v0 = np.atleast_2d(np.asarray(visible_batch, dtype=np.float64))
    if v0.shape[1] != model.spec.layer_widths[h]:
        raise ValueError(
            f"visible batch has {v0.shape[1]} columns, layer {h} has {model.spec.layer_widths[h]}"
        )
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    W = model.masked_weight(h)
    b = model.biases[h]
    c = model.visible_biases[h]

    ph0 = sigmoid(v0 @ W + b)
    hs = (rng.random(ph0.shape) < ph0).astype(np.float64)
    for step in range(cfg.cd_steps):
        vk = sigmoid(hs @ W.T + c)
        phk = sigmoid(vk @ W + b)
        if step + 1 < cfg.cd_steps:
            hs = (rng.random(phk.shape) < phk).astype(np.float64)

    lr = cfg.cd_learning_rate / len(v0)
    dW = lr * (v0.T @ ph0 - vk.T @ phk)
    dW *= model.mask[h]
    db = lr * (ph0 - phk).sum(axis=0)
    dc = lr * (v0 - vk).sum(axis=0)
    return CDUpdate(dW, db, dc, ph0)


def apply_cd_update(model: Model, layer: int, update: CDUpdate) -> None:
    """Add ``update`` to ``model`` in place (training-loop helper)."""
    h = layer - 1
    model.weights[h] += update.weights
    model.biases[h] += update.hidden_biases
    model.visible_biases[h] += update.visible_biases


def pair_reconstruction_error(model: Model, layer: int, visible) -> float:
    """Mean per-sample reconstruction error of the RBM below ``layer``."""
    hidden = sigmoid(visible @ model.masked_weight(layer - 1) + model.biases[layer - 1])
    xhat = reconstruct(model, hidden, layer)
    return 0.5 * float(np.sum((xhat - visible) ** 2)) / len(visible)


def cd_epoch(model: Model, layer: int, data: np.ndarray, cfg: TrainConfig,
             rng: np.random.Generator) -> None:
    order = rng.permutation(len(data))
    for start in range(0, len(data), cfg.batch_size):
        batch = data[order[start:start + cfg.batch_size]]
        apply_cd_update(model, layer, rbm_cd_update(model, layer, batch, cfg, rng))


def propagate_up(model: Model, layer: int, data: np.ndarray) -> np.ndarray:
    """Mean activations ``P(h_layer = 1 | h_{layer-1})`` for every row."""
    return sigmoid(data @ model.masked_weight(layer - 1) + model.biases[layer - 1])


def pretrain(model: Model, data, cfg: TrainConfig) -> Model:
    """Greedy bottom-up RBM training of every hidden layer.

    The output pair is left to fine-tuning.  Each layer is trained on the
    mean activations of the (already trained) layer below.
    """
    data = np.asarray(data, dtype=np.float64)
    if data.shape[1] != model.spec.layer_widths[0]:
        raise ValueError("data width does not match the input layer")
    model = model.copy()
    rng = np.random.default_rng(cfg.seed)
    rep = data
    history = []
    for layer in range(1, model.spec.hidden_count + 1):
        errs = [pair_reconstruction_error(model, layer, rep)]
        for _ in range(cfg.epochs_pretrain):
            cd_epoch(model, layer, rep, cfg, rng)
            errs.append(pair_reconstruction_error(model, layer, rep))
        if not model.is_finite():
            raise TrainingDivergedError(f"non-finite parameters while pre-training layer {layer}")
        history.append(errs)
        rep = propagate_up(model, layer, rep)
    model.meta["pretrain_reconstruction"] = history
    return model


# --- fine-tuning ------------------------------------------------------------


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    valid_loss: float
    valid_error_rate: float


@dataclass
class FinetuneResult:
    model: Model
    trace: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    clamped: int = 0

    def trace_csv(self) -> str:
        return trace_to_csv(self.trace)


def trace_to_csv(trace) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epoch", "train_loss", "valid_loss", "valid_error_rate"])
    for r in trace:
        w.writerow([r.epoch, repr(r.train_loss), repr(r.valid_loss), repr(r.valid_error_rate)])
    return buf.getvalue()


def predict(model: Model, inputs) -> np.ndarray:
    return np.argmax(forward(model, inputs)[-1], axis=1)


def error_rate(model: Model, batch: LabeledBatch) -> float:
    """Misclassified fraction, in percent."""
    if len(batch) == 0:
        return 0.0
    return 100.0 * float(np.mean(predict(model, batch.inputs) != batch.labels))


def finetune(model: Model, train: LabeledBatch, cfg: TrainConfig, loss: LossConfig,
             valid: LabeledBatch | None = None) -> FinetuneResult:
    """Mini-batch gradient descent on ``total_loss``.

    Each step moves by ``learning_rate`` times the batch-mean gradient.  When
    a validation set is given the returned model is the snapshot with the
    lowest validation loss (epoch 0 = the incoming model); otherwise the
    final one.  Losses in the trace are per-sample means.
    """
    train.check(model.spec)
    model = model.copy()
    rng = np.random.default_rng(cfg.seed + 1)
    diag = LossDiagnostics()

    def evaluate(m, epoch):
        tl = total_loss(m, train, loss, diag) / max(len(train), 1)
        if valid is not None and len(valid):
            vl = total_loss(m, valid, loss, diag) / len(valid)
            ve = error_rate(m, valid)
        else:
            vl, ve = tl, error_rate(m, train)
        if not (math.isfinite(tl) and math.isfinite(vl)):
            raise TrainingDivergedError(f"non-finite loss at fine-tuning epoch {epoch}")
        return EpochRecord(epoch, tl, vl, ve)

    trace = [evaluate(model, 0)]
    best, best_epoch = model.copy(), 0
    for epoch in range(1, cfg.epochs_finetune + 1):
        order = rng.permutation(len(train))
        for start in range(0, len(train), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            mb = LabeledBatch(train.inputs[idx], train.labels[idx])
            _, g = loss_and_gradients(model, mb, loss)
            step = cfg.learning_rate / len(idx)
            for h in range(model.spec.n_pairs):
                model.weights[h] -= step * g.weights[h]
                model.biases[h] -= step * g.biases[h]
                model.visible_biases[h] -= step * g.visible_biases[h]
        rec = evaluate(model, epoch)
        trace.append(rec)
        if rec.valid_loss < trace[best_epoch].valid_loss:
            best, best_epoch = model.copy(), epoch
    chosen = best if valid is not None else model
    return FinetuneResult(chosen, trace, best_epoch if valid is not None else cfg.epochs_finetune,
                          diag.clamped)


# --- checkpoints ------------------------------------------------------------

CHECKPOINT_MAGIC = b"KDEGCKPT"
CHECKPOINT_VERSION = 1


def save_checkpoint(model: Model, path) -> None:
    """Binary layout, all integers little-endian::

        8 bytes   magic "KDEGCKPT"
        u32       format version (1)
        u32 + N   spec block: byte length, then UTF-8 key=value text
                  (includes activation= and kind= lines)
        per pair h, in order:
            f64[n_h * n_{h+1}]  weights, row-major
            f64[n_{h+1}]        biases of layer h+1
            f64[n_h]            reconstruction biases of layer h
        per pair h, in order:
            u64                 number of mask-true edges
            u32[2 * count]      (src, dst) index pairs, row-major order
    """
    spec_text = model.spec.to_text() + f"activation={model.activation}\nkind={model.kind}\n"
    block = spec_text.encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(block)))
        fh.write(block)
        for h in range(model.spec.n_pairs):
            for arr in (model.weights[h], model.biases[h], model.visible_biases[h]):
                fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        for pair in model.mask.pairs:
            idx = np.argwhere(pair).astype("<u4")
            fh.write(struct.pack("<Q", len(idx)))
            fh.write(idx.tobytes())


class CheckpointError(ValueError):
    pass


def load_checkpoint(path) -> Model:
    from .config import parse_key_values

    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:8] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    version, n = struct.unpack_from("<II", raw, 8)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    pos = 16
    values = parse_key_values(raw[pos:pos + n].decode())
    pos += n
    activation = values.pop("activation", "sigmoid")
    kind = values.pop("kind", "custom")
    spec = TopologySpec.from_mapping(values)
    widths = spec.layer_widths

    def take(count):
        nonlocal pos
        nbytes = 8 * count
        if pos + nbytes > len(raw):
            raise CheckpointError(f"{path}: truncated")
        arr = np.frombuffer(raw, dtype="<f8", count=count, offset=pos).astype(np.float64)
        pos += nbytes
        return arr

    weights, biases, visible = [], [], []
    for h in range(spec.n_pairs):
        weights.append(take(widths[h] * widths[h + 1]).reshape(widths[h], widths[h + 1]))
        biases.append(take(widths[h + 1]))
        visible.append(take(widths[h]))
    pairs = []
    for h in range(spec.n_pairs):
        if pos + 8 > len(raw):
            raise CheckpointError(f"{path}: truncated")
        (count,) = struct.unpack_from("<Q", raw, pos)
        pos += 8
        idx = np.frombuffer(raw, dtype="<u4", count=2 * count, offset=pos).reshape(-1, 2)
        pos += 8 * count
        pair = np.zeros((widths[h], widths[h + 1]), dtype=bool)
        pair[idx[:, 0], idx[:, 1]] = True
        pairs.append(pair)
    return Model(spec, EdgeMask(tuple(pairs)), weights, biases, visible, activation, kind)
