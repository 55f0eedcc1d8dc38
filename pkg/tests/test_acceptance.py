"""Acceptance criteria, one test per criterion.

Test names start with ``test_<n>_`` so the summary hook in conftest.py can
print them in order.  Criterion 8 trains on the bundled MNIST subset and
takes several minutes on one core.
"""
import math
import time
from pathlib import Path

import numpy as np

from kdegree import expcli, geosim, learning, metrics, netcore, pruning
from test_learning import (DATA, cd_samples, exact_cd1_expectation, gradient_check,
                           within_3_sigma)
from test_pruning import _rbm_model, keep_set_oracle, run_small

ROOT = Path(__file__).resolve().parents[1]
DESK_CONFIG = ROOT / "configs" / "desk.cfg"


def report(n, ok, detail):
    print(f"criterion {n}: {'PASS' if ok else 'FAIL'} ({detail})")
    assert ok, detail


def test_1_edge_counts(capsys):
    t0 = time.perf_counter()
    assert expcli.main(["topology"]) == 0
    elapsed = time.perf_counter() - t0
    lines = dict(l.split(": ", 1) for l in capsys.readouterr().out.splitlines())
    ok = (lines["dense_edges"] == "455504,261580,139950,49910,12160,825"
          and lines["kdegree_edges"] == "39200,29000,22500,15500,8000,750"
          and elapsed < 1.0)
    report(1, ok, f"dense {lines['dense_edges']}; kdegree {lines['kdegree_edges']}; {elapsed:.2f}s")


def test_2_table3_arithmetic():
    t0 = time.perf_counter()
    rows = metrics.published_rows()
    worst_cs = worst_rel = 0.0
    for (size, _, _), (cs_d, cs_k, rel) in zip(metrics.PUBLISHED_ERROR_RATES,
                                               metrics.PUBLISHED_SPEEDS):
        d = next(r for r in rows if r.model == "dense" and r.data_size_units == size)
        k = next(r for r in rows if r.model == "kdegree" and r.data_size_units == size)
        worst_cs = max(worst_cs, abs(d.convergence_speed - cs_d), abs(k.convergence_speed - cs_k))
        worst_rel = max(worst_rel, abs(k.relative_cost_percent - rel))
    elapsed = time.perf_counter() - t0
    ok = worst_cs <= 0.01 + 1e-12 and worst_rel <= 0.2 and elapsed < 1.0
    report(2, ok, f"max speed error {worst_cs:.4f}, max relative-cost error {worst_rel:.3f}pp")


def test_3_density_laws():
    limit = netcore.dense_density_limit(5)
    ok = abs(limit - 6 / 49) <= 1e-12
    k = 8
    dens = []
    for s in (1, 2, 4, 8):
        spec = netcore.TopologySpec((32 * s,) * 4, (k, k, k))
        mask = netcore.build_kdegree_mask(spec, seed=s)
        n = spec.vertex_count
        d = netcore.mask_density(mask)
        ok &= d < 1.1 * k / (n - 1)
        dens.append(d)
    ok &= all(a > b for a, b in zip(dens, dens[1:]))
    report(3, ok, f"limit {limit:.12f}; densities {[round(d, 5) for d in dens]}")


def test_4_communication_model():
    spec = netcore.reference_spec()
    dense_spec = spec.dense()
    dense = netcore.init_model(dense_spec, netcore.build_dense_mask(dense_spec), kind="dense")
    kdeg = netcore.init_model(spec, netcore.build_kdegree_mask(spec, 0), kind="kdegree")
    plan = geosim.make_partition(spec)
    dist = [1.0, 3.0, 2.0, 5.0, 4.0]
    ok = True
    for payload in geosim.PAYLOADS:
        pol = geosim.SyncPolicy(payload=payload)
        for m in (dense, kdeg):
            g1, c1 = geosim.simulate_run(m, plan, pol, 5, dist)
            _, c2 = geosim.simulate_run(m, plan, pol, 10, dist)
            ok &= c2 == 2 * c1
            ok &= math.isclose(geosim.communication_cost(g1.scaled_distances(3.0)), 3 * c1,
                               rel_tol=1e-15)
    pol = geosim.SyncPolicy(payload="full_model", convention="reported")
    gd, cd = geosim.simulate_run(dense, plan, pol, 5, dist)
    _, ck = geosim.simulate_run(kdeg, plan, pol, 5, dist)
    params = geosim.full_model_count(dense, "reported") / geosim.full_model_count(kdeg, "reported")
    ok &= math.isclose(cd / ck, params, rel_tol=1e-15)
    ok &= abs(cd / ck - 8.0) < 0.01
    ok &= geosim.NOT_REPRODUCIBLE_NOTE in geosim.cost_summary(gd, pol)
    report(4, ok, f"CC ratio {cd / ck:.6f}, parameter ratio {params:.6f}")


def test_5_constraint_suite():
    ok = True
    for seed in (0, 1, 2):
        spec, m = run_small(seed)
        ok &= all(np.all(m.mask.out_degrees(h) == k) for h, k in enumerate(spec.degree_schedule))
        totals = list(m.mask.edge_counts())
        ok &= all(a >= b for a, b in zip(totals, totals[1:]))
        ok &= not np.any(m.mask[0] & ~netcore.section_mask(spec)[0])
        ok &= m.masked_out_is_zero()
        # training afterwards must keep structural zeros
        rng = np.random.default_rng(seed)
        batch = learning.LabeledBatch(rng.random((30, 64)), rng.integers(0, 8, 30))
        cfg = learning.TrainConfig(epochs_pretrain=1, epochs_finetune=2, batch_size=10, seed=seed)
        trained = learning.pretrain(m, batch.inputs, cfg)
        ok &= trained.masked_out_is_zero()
        trained = learning.finetune(trained, batch, cfg, learning.LossConfig(0.01, 0.01, True)).model
        ok &= trained.masked_out_is_zero()
    report(5, ok, f"last totals {totals}")


def test_6_pruning_statistics():
    ok = pruning.deletion_probability(0.0, 0.4) == 1.0
    ok &= pruning.deletion_probability(-0.2, 0.4) == 1.0
    ok &= abs(pruning.deletion_probability(0.4, 0.4) - math.exp(-1)) < 1e-15

    m = _rbm_model([[3.0, 5.0], [5.0, 0.5]], [2.0, -8.0], [-3.0, -3.0])
    data = np.array([[1.0, 0.0]])
    trials, hits, p = 10_000, 0, None
    for seed in range(trials):
        audit = pruning.AuditLog()
        pruning.prune_pair(m, 0, data, pruning.PruneConfig(4.0, max_rounds=1, seed=seed), 1,
                           audit=audit)
        (row,) = [r for r in audit.rows if r[2] == 0]
        p, hits = row[6], hits + row[7]
    sigma = math.sqrt(trials * p * (1 - p))
    ok &= abs(hits - trials * p) <= 3 * sigma

    rng = np.random.default_rng(5)
    W = rng.normal(0, 1, (4, 3))
    pm = _rbm_model(W, np.zeros(3), np.zeros(4))
    out = pruning.prune_pair(pm, 0, rng.random((5, 4)), pruning.PruneConfig(max_rounds=0), 2)
    ok &= all(set(np.flatnonzero(out.mask[0][i])) == keep_set_oracle(W[i], 2) for i in range(4))
    report(6, ok, f"{hits}/{trials} accepted at p={p:.4f} (3 sigma = {3 * sigma:.1f})")


def test_7_gradient_correctness():
    worst = max(gradient_check(seed) for seed in range(20))
    W, b, c = [[0.8], [-0.5]], [0.2], [-0.3, 0.4]
    dW, db, dc = exact_cd1_expectation(W, b, c, DATA)
    cd_ok = within_3_sigma(cd_samples(W, b, c), np.concatenate([dW.ravel(), db, dc]))
    report(7, worst < 1e-4 and cd_ok, f"max relative error {worst:.2e}; CD within 3 sigma: {cd_ok}")


def _errors(rows):
    return {(r.model, r.data_size_units): r.error_rate_percent for r in rows}


def test_8_learning_sanity(tmp_path):
    cfg = expcli.ExperimentConfig.from_file(DESK_CONFIG)
    assert cfg.x_list == (1, 5) and cfg.train_per_class == 100
    t0 = time.perf_counter()
    rows = expcli.run_experiment(cfg, tmp_path)
    elapsed = time.perf_counter() - t0
    e = _errors(rows)
    gap1 = e["kdegree", 1] - e["dense", 1]
    gap5 = e["kdegree", 5] - e["dense", 5]
    ok = (all(v < 15.0 for v in e.values())
          and e["dense", 1] <= e["kdegree", 1] + 1.0
          and gap5 < gap1
          and elapsed <= 600)
    report(8, ok, "errors " + ", ".join(f"{k}x{x}={v:.2f}%" for (k, x), v in sorted(e.items()))
           + f"; gap x1 {gap1:.2f}pp, x5 {gap5:.2f}pp; {elapsed:.0f}s")


DETERMINISM = """\
x_list=1,2
epochs_pretrain=1
epochs_finetune=2
train_per_class=20
valid_per_class=10
test_per_class=20
save_checkpoints=false
"""


def test_9_determinism(tmp_path):
    cfg_path = tmp_path / "det.cfg"
    cfg_path.write_text(DETERMINISM)
    outs = []
    for name in ("a", "b"):
        assert expcli.main(["experiment", "--config", str(cfg_path), "--out", str(tmp_path / name)]) == 0
        raw = (tmp_path / name / "metrics.csv").read_bytes()
        assert raw.splitlines()[0].endswith(b",wall_time_seconds")
        outs.append(b"\n".join(line.rsplit(b",", 1)[0] for line in raw.splitlines()))
    report(9, outs[0] == outs[1], f"{len(outs[0])} bytes compared")
