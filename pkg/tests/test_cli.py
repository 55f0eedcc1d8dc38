import csv
import io

import pytest

from kdegree import config, expcli, learning


def run(capsys, *argv):
    code = expcli.main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def write_cfg(tmp_path, text, name="exp.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


SMALL = """\
layer_widths=784,64,32,10
degree_schedule=12,8,10
partition_layer=1
section_count=4
train_per_class=5
valid_per_class=5
test_per_class=5
batch_size=10
"""


class TestConfigFile:
    def test_parse(self):
        got = config.parse_key_values("# comment\na=1\n\nb = x,y  # trailing\n")
        assert got == {"a": "1", "b": "x,y"}

    def test_duplicate_key(self):
        with pytest.raises(config.ConfigError):
            config.parse_key_values("a=1\na=2\n")

    def test_round_trip(self):
        d = {"a": "1", "b": "2,3"}
        assert config.parse_key_values(config.format_key_values(d)) == d

    def test_unknown_experiment_key(self, tmp_path, capsys):
        code, _, err = run(capsys, "topology", "--config", write_cfg(tmp_path, "colour=blue\n"))
        assert code == 1 and "colour" in err

    def test_typed_values(self):
        cfg = expcli.ExperimentConfig.from_mapping(
            {"x_list": "1,2", "models": "kdegree", "save_checkpoints": "no", "lambda1": "0.5"})
        assert cfg.x_list == (1, 2) and cfg.models == ("kdegree",)
        assert cfg.save_checkpoints is False and cfg.lambda1 == 0.5


class TestTopology:
    def test_reference_counts(self, capsys):
        code, out, _ = run(capsys, "topology")
        assert code == 0
        lines = dict(l.split(": ", 1) for l in out.splitlines())
        assert lines["dense_edges"] == "455504,261580,139950,49910,12160,825"
        assert lines["kdegree_edges"] == "39200,29000,22500,15500,8000,750"
        assert lines["dense_weights"] == "454720,261000,139500,49600,12000,750"
        assert lines["vertices"] == "2369"
        assert lines["dense_density_limit"] == "0.122449"

    def test_infeasible_spec(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path, "layer_widths=10,4,2\ndegree_schedule=3,2\nsection_count=2\n"
                                  "partition_layer=1\n")
        code, _, err = run(capsys, "topology", "--config", cfg)
        assert code == 1 and "error" in err


class TestMetricsCommand:
    def test_published(self, capsys):
        code, out, _ = run(capsys, "metrics")
        rows = list(csv.reader(io.StringIO(out)))
        assert code == 0 and rows[1][:4] == ["1", "4.92", "7.71", "2.54"]

    def test_from_file(self, tmp_path, capsys):
        p = tmp_path / "e.csv"
        p.write_text("data_size,error_dense,error_kdegree\n1,4.0,6.0\n")
        code, out, _ = run(capsys, "metrics", "--errors", str(p), "--style", "fig3")
        assert out.splitlines()[1:] == ["1,dense,4.0", "1,kdegree,6.0"]


class TestSimulate:
    def test_full_model_ratio(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path, "sync_payload=full_model\nsync_convention=reported\n")
        code, out, _ = run(capsys, "simulate", "--config", cfg, "--epochs", "3")
        assert code == 0
        ratio = float(out.strip().splitlines()[-1].split(":")[1])
        assert ratio == pytest.approx(919929 / 114950, abs=1e-6)
        assert "only ratios" in out

    def test_distances_file(self, tmp_path, capsys):
        d = tmp_path / "dist.txt"
        d.write_text("1 1\n2 1\n3 1\n4 1\n5 2\n")
        cfg = write_cfg(tmp_path, f"distances_file={d}\n")
        code, out, _ = run(capsys, "simulate", "--config", cfg)
        assert code == 0 and "0-5,2.0," in out


class TestRuns:
    def test_zero_epochs_is_chance(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path, SMALL + "epochs_pretrain=0\nepochs_finetune=0\n")
        code, out, _ = run(capsys, "experiment", "--config", cfg, "--out", str(tmp_path / "o"))
        assert code == 0
        rows = list(csv.DictReader(io.StringIO(out.split("note:")[0])))
        assert len(rows) == 2
        for r in rows:
            assert float(r["cc"]) == 0.0
            assert float(r["error_rate_percent"]) >= 70.0
        for name in ("metrics.csv", "table1.csv", "table3.csv", "fig3.csv", "trace_dense_x1.csv"):
            assert (tmp_path / "o" / name).exists()

    def test_train_writes_checkpoint(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path, SMALL + "epochs_pretrain=1\nepochs_finetune=1\n")
        code, out, _ = run(capsys, "train", "--config", cfg, "--model", "kdegree", "--out",
                           str(tmp_path / "t"))
        assert code == 0 and out.startswith("model,")
        m = learning.load_checkpoint(tmp_path / "t" / "model_kdegree_x1.ckpt")
        assert list(m.mask.edge_counts()) == [784 * 12, 64 * 8, 32 * 10]

    def test_prune(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path, SMALL + "prune_max_rounds=1\nprune_eval_subset=8\n")
        code, out, _ = run(capsys, "prune", "--config", cfg, "--out", str(tmp_path / "p"))
        assert code == 0
        assert out.strip() == "kdegree_edges: 9408,512,320"
        for name in ("audit.csv", "pruned.ckpt", "edges.txt"):
            assert (tmp_path / "p" / name).exists()

    def test_bad_data_dir(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path, SMALL + f"mnist_dir={tmp_path / 'nowhere'}\n")
        code, _, err = run(capsys, "experiment", "--config", cfg, "--out", str(tmp_path / "o"))
        assert code == 1 and "load data" in err
