import csv
import itertools
import math

import numpy as np
import pytest

from kdegree import learning as L
from kdegree import netcore as nc
from kdegree import pruning as P


class TestDeletionProbability:
    def test_zero_delta(self):
        assert P.deletion_probability(0.0, 0.3) == 1.0

    def test_negative_delta(self):
        assert P.deletion_probability(-0.1, 0.3) == 1.0

    def test_delta_equals_error(self):
        assert P.deletion_probability(0.3, 0.3) == pytest.approx(math.exp(-1), abs=1e-15)

    def test_general(self):
        assert P.deletion_probability(0.2, 0.1) == pytest.approx(math.exp(-2))

    def test_requires_positive_error(self):
        with pytest.raises(ValueError):
            P.deletion_probability(0.1, 0.0)


def _rbm_model(W, b, c):
    W = np.asarray(W, float)
    spec = nc.TopologySpec(W.shape, layerwise=False)
    return nc.Model(spec, nc.build_dense_mask(spec), [W], [np.asarray(b, float)],
                    [np.asarray(c, float)])


def test_removal_deltas_match_brute_force():
    rng = np.random.default_rng(3)
    m = _rbm_model(rng.normal(0, 1, (5, 4)), rng.normal(0, 1, 4), rng.normal(0, 1, 5))
    data = rng.random((7, 5))
    rows, cols = np.nonzero(np.ones((5, 4), bool))
    got = P.removal_deltas(m.weights[0], m.biases[0], m.visible_biases[0], data, rows, cols,
                           chunk_elems=50)
    base = L.pair_reconstruction_error(m, 1, data)
    for t, (i, j) in enumerate(zip(rows, cols)):
        cut = m.copy(weights=[m.weights[0].copy()])
        cut.weights[0][i, j] = 0.0
        assert got[t] == pytest.approx(L.pair_reconstruction_error(cut, 1, data) - base, abs=1e-12)


def test_monte_carlo_acceptance_rate():
    # one candidate on row 0 whose removal hurts; its acceptance probability is fixed
    m = _rbm_model([[3.0, 5.0], [5.0, 0.5]], [2.0, -8.0], [-3.0, -3.0])
    data = np.array([[1.0, 0.0]])
    trials = 10_000
    hits = 0
    p = None
    for seed in range(trials):
        audit = P.AuditLog()
        P.prune_pair(m, 0, data, P.PruneConfig(weight_threshold=4.0, max_rounds=1, seed=seed), 1,
                     audit=audit)
        (row,) = [r for r in audit.rows if r[2] == 0]
        p = row[6]
        hits += row[7]
    assert 0.3 < p < 0.8
    sigma = math.sqrt(trials * p * (1 - p))
    assert abs(hits - trials * p) <= 3 * sigma


def keep_set_oracle(row, k):
    """Exhaustive: the k-subset with the largest kept magnitude, lowest index deleted on ties."""
    n = len(row)
    best = None
    for keep in itertools.combinations(range(n), k):
        dropped = sorted(set(range(n)) - set(keep))
        key = (sum(abs(row[j]) for j in keep), tuple(-j for j in dropped))
        if best is None or key > best[0]:
            best = (key, keep)
    return set(best[1])


class TestForcePrune:
    def test_against_exhaustive_oracle(self):
        rng = np.random.default_rng(0)
        for trial in range(50):
            W = rng.normal(0, 1, (4, 3))
            if trial % 5 == 0:
                W[:, 1] = W[:, 0]  # ties
            mask = np.ones((4, 3), bool)
            for i in range(4):
                out = P.force_prune_row(W[i], mask[i], 2)
                assert set(np.flatnonzero(out)) == keep_set_oracle(W[i], 2)

    def test_tie_deletes_lowest_index(self):
        out = P.force_prune_row(np.array([0.2, -0.2, 0.9]), np.ones(3, bool), 2)
        assert out.tolist() == [False, True, True]

    def test_pair_force_mode_matches_oracle(self):
        rng = np.random.default_rng(1)
        m = _rbm_model(rng.normal(0, 1, (4, 3)), np.zeros(3), np.zeros(4))
        out = P.prune_pair(m, 0, rng.random((5, 4)), P.PruneConfig(max_rounds=0), 2)
        for i in range(4):
            assert set(np.flatnonzero(out.mask[0][i])) == keep_set_oracle(m.weights[0][i], 2)
        assert out.masked_out_is_zero()

    def test_unchanged_when_already_at_target(self):
        spec = nc.TopologySpec((6, 4), (2,))
        m = nc.init_model(spec, nc.build_kdegree_mask(spec, 0), seed=1)
        out = P.prune_pair(m, 0, np.random.default_rng(0).random((4, 6)), P.PruneConfig(), 2,
                           L.TrainConfig())
        assert out.mask.equals(m.mask)
        for a, b in zip(m.weights, out.weights):
            np.testing.assert_array_equal(a, b)

    def test_infeasible(self):
        spec = nc.TopologySpec((6, 4), (2,))
        m = nc.init_model(spec, nc.build_kdegree_mask(spec, 0))
        with pytest.raises(P.InfeasiblePruningError):
            P.prune_pair(m, 0, np.zeros((2, 6)), P.PruneConfig(), 3)


def test_audit_log_csv(tmp_path):
    rng = np.random.default_rng(2)
    spec = nc.TopologySpec((6, 5), layerwise=False)
    m = nc.init_model(spec, nc.build_dense_mask(spec), seed=0)
    audit = P.AuditLog()
    out = P.prune_pair(m, 0, rng.random((10, 6)), P.PruneConfig(max_rounds=2), 2, L.TrainConfig(),
                       audit)
    path = tmp_path / "audit.csv"
    audit.write_csv(path)
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == list(P.AuditLog.header)
    assert all(0 <= float(r["probability"]) <= 1 for r in rows)
    deleted = {(int(r["src"]), int(r["dst"])) for r in rows if r["deleted"] == "1"}
    for i, j in deleted:
        assert not out.mask[0][i, j]
    assert np.all(out.mask.out_degrees(0) == 2)


SMALL = dict(layer_widths=(64, 32, 16, 8), degree_schedule=(8, 8, 4), partition_layer=1,
             section_count=4)


def run_small(seed):
    spec = nc.TopologySpec(**SMALL)
    over = nc.init_model(spec.dense(), nc.build_dense_mask(spec.dense()), seed=seed, scale=0.1)
    data = np.random.default_rng(seed).random((40, 64))
    cfg = P.PruneConfig(weight_threshold=0.05, eval_subset_size=16, max_rounds=3, seed=seed)
    return spec, P.run_procedure_one(over, data, spec, cfg, L.TrainConfig(seed=seed, batch_size=10))


class TestProcedureOne:
    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_constraints(self, seed):
        spec, m = run_small(seed)
        for h, k in enumerate(spec.degree_schedule):
            assert np.all(m.mask.out_degrees(h) == k)
        totals = m.mask.edge_counts()
        assert all(a >= b for a, b in zip(totals, totals[1:]))
        assert not np.any(m.mask[0] & ~nc.section_mask(spec)[0])
        assert m.masked_out_is_zero()
        assert m.kind == "kdegree"

    def test_reference_counts_by_magnitude(self):
        spec = nc.reference_spec()
        dense = spec.dense()
        over = nc.init_model(dense, nc.build_dense_mask(dense), seed=0)
        m = P.run_procedure_one(over, np.zeros((0, 784)), spec, P.PruneConfig(max_rounds=0))
        assert list(m.mask.edge_counts()) == [39200, 29000, 22500, 15500, 8000, 750]

    def test_increasing_totals_rejected(self):
        spec = nc.TopologySpec((4, 8, 8), (2, 8), layerwise=False)
        over = nc.init_model(spec.dense(), nc.build_dense_mask(spec.dense()))
        with pytest.raises(P.LayerwiseConstraintError):
            P.run_procedure_one(over, np.zeros((0, 4)), spec, P.PruneConfig(max_rounds=0))

    def test_width_mismatch(self):
        spec = nc.TopologySpec(**SMALL)
        other = nc.TopologySpec((64, 32, 8), layerwise=False)
        with pytest.raises(ValueError):
            P.run_procedure_one(nc.init_model(other, nc.build_dense_mask(other)), np.zeros((1, 64)),
                                spec, P.PruneConfig())
