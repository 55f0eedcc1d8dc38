"""Experiment orchestration and the ``kdegree`` command line.

Subcommands::

    kdegree topology   [--config FILE]           edge counts, densities
    kdegree train      --config FILE --model KIND --out DIR
    kdegree prune      --config FILE --out DIR
    kdegree simulate   --config FILE [--checkpoint FILE] [--epochs N]
    kdegree experiment --config FILE --out DIR
    kdegree metrics    [--errors CSV] [--style table3|fig3]

Configuration files are flat ``key=value`` text; see ``ExperimentConfig``.
"""
from __future__ import annotations

import argparse
import logging
import sys
import time
from dataclasses import dataclass, fields, replace
from pathlib import Path

from . import datasets, geosim, learning, metrics, netcore, pruning
from .config import ConfigError, read_key_values

log = logging.getLogger("kdegree")


class ExperimentError(RuntimeError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"{stage}: {cause}")
        self.stage = stage


def _ints(s: str) -> tuple[int, ...]:
    return tuple(int(v) for v in s.split(",") if v.strip())


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes"):
        return True
    if v in ("0", "false", "no"):
        return False
    raise ConfigError(f"not a boolean: {s!r}")


@dataclass
class ExperimentConfig:
    """Every knob of an experiment.  Unknown keys in a config file are an error."""

    layer_widths: tuple[int, ...] = netcore.REFERENCE_WIDTHS
    degree_schedule: tuple[int, ...] = netcore.REFERENCE_DEGREES
    partition_layer: int = 2
    section_count: int = 5
    models: tuple[str, ...] = ("dense", "kdegree")
    kdegree_mode: str = "direct"
    x_list: tuple[int, ...] = (1,)
    seed: int = 0
    init_scale: float = 0.01
    # learning
    lambda1: float = 0.00001
    lambda2: float = 0.00009
    include_reconstruction: bool = False
    cd_steps: int = 1
    learning_rate: float = 1.0
    pretrain_learning_rate: float = 0.3
    epochs_pretrain: int = 5
    epochs_finetune: int = 12
    batch_size: int = 10
    # pruning
    prune_threshold: float = 0.05
    prune_eval_subset: int = 32
    prune_max_rounds: int = 10
    # data
    mnist_dir: str = ""
    train_per_class: int = 100
    valid_per_class: int = 100
    test_per_class: int = 300
    # cluster accounting
    sync_payload: str = "verge_params_up"
    sync_rounds_per_epoch: int = 1
    sync_convention: str = "mask"
    bytes_per_parameter: float = 8.0
    distances_file: str = ""
    save_checkpoints: bool = True

    @classmethod
    def from_mapping(cls, values: dict) -> "ExperimentConfig":
        known = {f.name: f for f in fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
            default = getattr(cls, key)
            if isinstance(default, tuple):
                kwargs[key] = tuple(v.strip() for v in raw.split(",")) if key == "models" else _ints(raw)
            elif isinstance(default, bool):
                kwargs[key] = _bool(raw)
            elif isinstance(default, int):
                kwargs[key] = int(raw)
            elif isinstance(default, float):
                kwargs[key] = float(raw)
            else:
                kwargs[key] = raw
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        return cls.from_mapping(read_key_values(path))

    def validate(self) -> None:
        for m in self.models:
            if m not in ("dense", "kdegree"):
                raise ConfigError(f"unknown model kind {m!r}")
        if self.kdegree_mode not in ("direct", "procedure"):
            raise ConfigError("kdegree_mode must be 'direct' or 'procedure'")
        if not self.x_list or min(self.x_list) < 1:
            raise ConfigError("x_list needs positive replication factors")
        self.spec()
        self.sync_policy()

    def spec(self) -> netcore.TopologySpec:
        return netcore.TopologySpec(self.layer_widths, self.degree_schedule,
                                    self.partition_layer, self.section_count)

    def train_config(self) -> learning.TrainConfig:
        return learning.TrainConfig(
            cd_steps=self.cd_steps, learning_rate=self.learning_rate,
            epochs_pretrain=self.epochs_pretrain, epochs_finetune=self.epochs_finetune,
            batch_size=self.batch_size, seed=self.seed,
            pretrain_learning_rate=self.pretrain_learning_rate,
        )

    def loss_config(self) -> learning.LossConfig:
        return learning.LossConfig(self.lambda1, self.lambda2, self.include_reconstruction)

    def prune_config(self) -> pruning.PruneConfig:
        return pruning.PruneConfig(self.prune_threshold, self.prune_eval_subset,
                                   self.prune_max_rounds, self.seed)

    def sync_policy(self) -> geosim.SyncPolicy:
        return geosim.SyncPolicy(self.sync_rounds_per_epoch, self.sync_payload,
                                 self.bytes_per_parameter, self.sync_convention)

    def distances(self) -> list[float]:
        if self.distances_file:
            return geosim.read_distances(self.distances_file, self.section_count)
        return [1.0] * self.section_count

    def load_data(self) -> dict[str, datasets.Dataset]:
        if self.mnist_dir:
            return datasets.load_mnist(self.mnist_dir)
        return datasets.desk_splits(datasets.load_bundled_subset(), self.train_per_class,
                                    self.valid_per_class, self.test_per_class)


def build_model(cfg: ExperimentConfig, kind: str, train_images=None,
                audit: pruning.AuditLog | None = None) -> netcore.Model:
    """Untrained model of the requested kind.

    ``kdegree`` either draws a random exact-degree mask or, in ``procedure``
    mode, prunes a sectioned dense model down to the degree schedule.
    """
    spec = cfg.spec()
    if kind == "dense":
        dense = spec.dense()
        return netcore.init_model(dense, netcore.build_dense_mask(dense), cfg.seed,
                                  cfg.init_scale, kind="dense")
    if cfg.kdegree_mode == "direct":
        mask = netcore.build_kdegree_mask(spec, cfg.seed)
        return netcore.init_model(spec, mask, cfg.seed, cfg.init_scale, kind="kdegree")
    start = netcore.init_model(spec, netcore.build_dense_mask(spec, sectioned=True), cfg.seed,
                               cfg.init_scale, kind="kdegree")
    return pruning.run_procedure_one(start, train_images, spec, cfg.prune_config(),
                                     cfg.train_config(), audit)


@dataclass
class CellResult:
    metrics: metrics.RunMetrics
    model: netcore.Model
    finetune: learning.FinetuneResult
    graph: geosim.ClusterGraph


def communication_epochs(cfg: ExperimentConfig, X: int) -> int:
    """Synchronisation epochs of one cell: every pass over X units of data counts X times."""
    return X * (cfg.epochs_pretrain + cfg.epochs_finetune)


def run_cell(cfg: ExperimentConfig, kind: str, X: int, data: dict, out_dir: Path | None = None) -> CellResult:
    t0 = time.perf_counter()
    train = datasets.replicate_x(data["train"], X, seed=cfg.seed)
    tag = f"{kind}_x{X}"
    audit = pruning.AuditLog() if kind == "kdegree" and cfg.kdegree_mode == "procedure" else None
    stage = "build"
    try:
        model = build_model(cfg, kind, data["train"].images, audit)
        stage = "pretrain"
        tc = cfg.train_config()
        model = learning.pretrain(model, train.images, tc)
        stage = "finetune"
        ft = learning.finetune(
            model, learning.LabeledBatch(train.images, train.labels), tc, cfg.loss_config(),
            learning.LabeledBatch(data["valid"].images, data["valid"].labels),
        )
        model = ft.model
        stage = "evaluate"
        err = learning.error_rate(model, learning.LabeledBatch(data["test"].images, data["test"].labels))
        stage = "simulate"
        plan = geosim.make_partition(cfg.spec())
        policy = cfg.sync_policy()
        graph, cc = geosim.simulate_run(model, plan, policy, communication_epochs(cfg, X),
                                        cfg.distances())
    except Exception as exc:
        raise ExperimentError(f"{tag} {stage}", exc) from exc
    wall = time.perf_counter() - t0
    row = metrics.RunMetrics(kind, X, err, cc, cc * policy.bytes_per_parameter,
                             wall_time_seconds=wall)
    if out_dir is not None:
        (out_dir / f"trace_{tag}.csv").write_text(ft.trace_csv())
        (out_dir / f"ledger_{tag}.csv").write_text(graph.ledger_csv())
        if audit is not None:
            audit.write_csv(out_dir / f"audit_{tag}.csv")
        if cfg.save_checkpoints:
            learning.save_checkpoint(model, out_dir / f"model_{tag}.ckpt")
    log.info("%s: test error %.2f%%, CC %.6g, %.1fs", tag, err, cc, wall)
    return CellResult(row, model, ft, graph)


def run_experiment(cfg: ExperimentConfig, out_dir=None) -> list[metrics.RunMetrics]:
    """Train and account every (model, X) cell; write CSV tables to ``out_dir``.

    Rows are ordered by (model, X).  On failure the rows finished so far are
    still written before the error propagates.
    """
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    try:
        data = cfg.load_data()
    except Exception as exc:
        raise ExperimentError("load data", exc) from exc
    rows = []
    try:
        for kind in cfg.models:
            for X in cfg.x_list:
                rows.append(run_cell(cfg, kind, X, data, out).metrics)
    finally:
        if rows:
            metrics.fill_speeds(rows)
            if out is not None:
                write_tables(rows, out)
    return rows


def write_tables(rows, out: Path) -> None:
    (out / "metrics.csv").write_text(metrics.metrics_csv(rows))
    kinds = {r.model for r in rows}
    if {"dense", "kdegree"} <= kinds:
        (out / "table1.csv").write_text(metrics.emit_table(rows, "table1"))
        (out / "table3.csv").write_text(metrics.emit_table(rows, "table3"))
    (out / "fig3.csv").write_text(metrics.emit_table(rows, "fig3"))


# --- command line -----------------------------------------------------------


def topology_report(spec: netcore.TopologySpec, seed: int = 0) -> str:
    dense = spec.dense()
    dense_mask = netcore.build_dense_mask(dense)
    k_mask = netcore.build_kdegree_mask(spec, seed)
    k_counts = k_mask.edge_counts()
    if k_counts != spec.kdegree_edge_counts():
        raise RuntimeError("constructed k-degree mask does not realise the degree schedule")
    dense_paper = netcore.paper_edge_count(spec, "dense")
    lines = [
        "layer_widths: " + ",".join(map(str, spec.layer_widths)),
        "degree_schedule: " + ",".join(map(str, spec.degree_schedule)),
        f"partition_layer: {spec.partition_layer}",
        f"section_count: {spec.section_count}",
        "dense_edges: " + ",".join(map(str, dense_paper)),
        "dense_weights: " + ",".join(map(str, dense_mask.edge_counts())),
        "kdegree_edges: " + ",".join(map(str, k_counts)),
        f"vertices: {spec.vertex_count}",
        f"density_dense: {netcore.density(spec.vertex_count, sum(dense_paper)):.6f}",
        f"density_kdegree: {netcore.density(spec.vertex_count, sum(k_counts)):.6f}",
        f"dense_density_limit: {netcore.dense_density_limit(spec.hidden_count):.6f}",
    ]
    ks = set(spec.degree_schedule)
    if len(ks) == 1:
        lines.append(f"kdegree_edge_estimate: {netcore.kdegree_edge_estimate(spec, ks.pop()):.1f}")
    return "\n".join(lines) + "\n"


def _load_config(path) -> ExperimentConfig:
    return ExperimentConfig.from_file(path) if path else ExperimentConfig()


def cmd_topology(args) -> int:
    cfg = _load_config(args.config)
    sys.stdout.write(topology_report(cfg.spec(), cfg.seed))
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data = cfg.load_data()
    cell = run_cell(cfg, args.model, args.x, data, out)
    sys.stdout.write(metrics.metrics_csv([cell.metrics]))
    return 0


def cmd_prune(args) -> int:
    cfg = _load_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data = cfg.load_data()
    spec = cfg.spec()
    audit = pruning.AuditLog()
    start = netcore.init_model(spec, netcore.build_dense_mask(spec, sectioned=True), cfg.seed,
                               cfg.init_scale, kind="kdegree")
    model = pruning.run_procedure_one(start, data["train"].images, spec, cfg.prune_config(),
                                      cfg.train_config(), audit)
    audit.write_csv(out / "audit.csv")
    learning.save_checkpoint(model, out / "pruned.ckpt")
    model.mask.write_edge_list(out / "edges.txt")
    print("kdegree_edges: " + ",".join(map(str, model.mask.edge_counts())))
    return 0


def cmd_simulate(args) -> int:
    cfg = _load_config(args.config)
    spec = cfg.spec()
    if args.checkpoint:
        model = learning.load_checkpoint(args.checkpoint)
        models = [model]
    else:
        # costs depend only on edge counts, which both k-degree modes share
        direct = replace(cfg, kdegree_mode="direct")
        models = [build_model(direct, "dense"), build_model(direct, "kdegree")]
    plan = geosim.make_partition(spec)
    policy = cfg.sync_policy()
    costs = {}
    for m in models:
        graph, cc = geosim.simulate_run(m, plan, policy, args.epochs, cfg.distances())
        costs[m.kind] = cc
        print(f"[{m.kind}] parameters={m.parameter_count()}")
        sys.stdout.write(graph.ledger_csv())
        sys.stdout.write(geosim.cost_summary(graph, policy))
    if "dense" in costs and costs.get("kdegree"):
        print(f"improvement (dense/kdegree): {costs['dense'] / costs['kdegree']:.6f}")
    return 0


def cmd_experiment(args) -> int:
    cfg = _load_config(args.config)
    rows = run_experiment(cfg, args.out)
    sys.stdout.write(metrics.metrics_csv(rows))
    print(geosim.NOT_REPRODUCIBLE_NOTE)
    return 0


def cmd_metrics(args) -> int:
    if args.errors:
        rows = metrics.read_error_rates(Path(args.errors).read_text())
    else:
        rows = metrics.published_rows()
    sys.stdout.write(metrics.emit_table(rows, args.style))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="kdegree", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("topology", help="edge counts and densities (no training)")
    s.add_argument("--config")
    s.set_defaults(func=cmd_topology)

    s = sub.add_parser("train", help="pre-train and fine-tune one model")
    s.add_argument("--config")
    s.add_argument("--model", choices=("dense", "kdegree"), default="kdegree")
    s.add_argument("--x", type=int, default=1, help="training-set replication factor")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("prune", help="construct the k-degree network by pruning")
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_prune)

    s = sub.add_parser("simulate", help="communication-cost accounting")
    s.add_argument("--config")
    s.add_argument("--checkpoint")
    s.add_argument("--epochs", type=int, default=1)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("experiment", help="dense vs k-degree over data sizes")
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_experiment)

    s = sub.add_parser("metrics", help="convergence-speed table from error rates")
    s.add_argument("--errors", help="CSV with data_size,error_dense,error_kdegree")
    s.add_argument("--style", choices=("table3", "fig3"), default="table3")
    s.set_defaults(func=cmd_metrics)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ExperimentError, ConfigError, ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
