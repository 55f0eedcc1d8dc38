import csv
import io

import pytest

from kdegree import metrics as M


class TestArithmetic:
    def test_convergence_speed_examples(self):
        assert M.convergence_speed(10, 4.92, 1, 1) == pytest.approx(2.54)
        assert M.convergence_speed(10, 2.95, 1, 10) == pytest.approx(7.05 / 11)
        assert M.convergence_speed(10, 10, 1, 3) == 0.0

    def test_relative_cost(self):
        assert M.relative_cost(2.0, 1.0) == 50.0
        assert M.relative_cost(2.0, 2.0) == 0.0
        with pytest.raises(ValueError):
            M.relative_cost(0.0, 1.0)

    def test_bad_sizes(self):
        with pytest.raises(ValueError):
            M.convergence_speed(10, 5, 0, 1)


class TestPublishedTable:
    def test_speeds_reproduced(self):
        rows = M.published_rows()
        for (size, _, _), (cs_d, cs_k, rel) in zip(M.PUBLISHED_ERROR_RATES, M.PUBLISHED_SPEEDS):
            d = next(r for r in rows if r.model == "dense" and r.data_size_units == size)
            k = next(r for r in rows if r.model == "kdegree" and r.data_size_units == size)
            assert d.convergence_speed == pytest.approx(cs_d, abs=0.01)
            assert k.convergence_speed == pytest.approx(cs_k, abs=0.01)
            assert k.relative_cost_percent == pytest.approx(rel, abs=0.2)

    def test_first_row_by_hand(self):
        rows = M.published_rows()
        k = next(r for r in rows if r.model == "kdegree" and r.data_size_units == 1)
        assert k.convergence_speed == pytest.approx(1.145)
        assert k.relative_cost_percent == pytest.approx(100 * (2.54 - 1.145) / 2.54)

    def test_table3_layout(self):
        text = M.emit_table(M.published_rows(), "table3")
        rows = list(csv.reader(io.StringIO(text)))
        assert rows[0] == ["data_size", "error_dense", "error_kdegree", "cs_dense", "cs_kdegree",
                           "relative_cost"]
        assert rows[1][:4] == ["1", "4.92", "7.71", "2.54"]
        assert len(rows) == 11


class TestRunMetrics:
    def test_validation(self):
        with pytest.raises(ValueError):
            M.RunMetrics("dense", 0, 5.0, 1.0)
        with pytest.raises(ValueError):
            M.RunMetrics("dense", 1, 101.0, 1.0)
        with pytest.raises(ValueError):
            M.RunMetrics("dense", 1, 5.0, -1.0)

    def test_csv_round_trip(self):
        rows = [M.RunMetrics("dense", 1, 8.5, 100.0, 800.0, wall_time_seconds=3.2),
                M.RunMetrics("kdegree", 1, 9.5, 12.5, 100.0, wall_time_seconds=4.1)]
        M.fill_speeds(rows)
        back = M.read_metrics_csv(M.metrics_csv(rows))
        assert back == rows

    def test_csv_without_wall_time(self):
        text = M.metrics_csv([M.RunMetrics("dense", 1, 8.5, 1.0, wall_time_seconds=9.0)], False)
        assert "wall_time" not in text and "9.0" not in text

    def test_relative_cost_skips_nonpositive_baseline(self):
        rows = [M.RunMetrics("dense", 1, 30.0, 0.0), M.RunMetrics("kdegree", 1, 40.0, 0.0)]
        M.fill_speeds(rows)
        assert rows[1].relative_cost_percent == 0.0


class TestTables:
    def test_table1_ratio(self):
        rows = [M.RunMetrics("dense", 1, 5.0, 800.0), M.RunMetrics("kdegree", 1, 6.0, 100.0)]
        lines = M.emit_table(rows, "table1").splitlines()
        assert lines == ["data_size,cc_dense,cc_kdegree,improvement", "1,800.0,100.0,8.0"]

    def test_fig3(self):
        rows = [M.RunMetrics("kdegree", 2, 6.0, 1.0), M.RunMetrics("dense", 2, 5.0, 1.0)]
        lines = M.emit_table(rows, "fig3").splitlines()
        assert lines[1:] == ["2,dense,5.0", "2,kdegree,6.0"]

    def test_unknown_style(self):
        with pytest.raises(ValueError):
            M.emit_table([M.RunMetrics("dense", 1, 5.0, 1.0)], "table9")

    def test_read_error_rates(self):
        rows = M.read_error_rates("data_size,error_dense,error_kdegree\n1,4.92,7.71\n")
        assert [r.model for r in rows] == ["dense", "kdegree"]
        assert rows[1].relative_cost_percent == pytest.approx(54.92, abs=0.01)
