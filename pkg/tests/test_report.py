import xml.etree.ElementTree as ET

import pytest

from mtkd_rl import report
from mtkd_rl.trainer import EpochRow, RunMetrics

SVG = "{http://www.w3.org/2000/svg}"


def fake_run(strategy, accs, M=3, weighted=True):
    rows = []
    for e, acc in enumerate(accs, start=1):
        w = [1.0 / M] * M if weighted else None
        rows.append(EpochRow(e, strategy, 1.0, 0.5, 0.2, 0.3, acc, w, w, [-1.0] * M if weighted else None))
    return RunMetrics(strategy, M, rows)


def write_tree(root, spec):
    """spec: {label: [(seed, RunMetrics)]} laid out as label/seedN/metrics.csv"""
    for label, runs in spec.items():
        for seed, m in runs:
            d = root / label / f"seed{seed}"
            d.mkdir(parents=True)
            m.write_csv(d / "metrics.csv")


class TestTables:
    def test_two_strategies_sorted_by_accuracy(self, tmp_path):
        write_tree(tmp_path, {
            "aver": [(0, fake_run("aver", [0.5, 0.6])), (1, fake_run("aver", [0.5, 0.7]))],
            "baseline": [(0, fake_run("baseline", [0.6, 0.8], weighted=False))],
        })
        rows = report.summarize(report.load_runs(tmp_path))
        assert [r.label for r in rows] == ["baseline", "aver"]
        assert rows[1].runs == 2 and rows[1].mean_acc == pytest.approx(0.65)
        assert rows[1].std_acc == pytest.approx(0.0707106781, rel=1e-8)
        assert rows[0].std_acc == 0.0
        text = report.table_text(rows)
        assert len(text.strip().splitlines()) == 3
        assert report.table_csv(rows).splitlines()[0] == "run,strategy,seeds,acc_mean,acc_std"

    def test_ties_break_by_label(self):
        runs = {"b": [fake_run("rl", [0.5])], "a": [fake_run("rl", [0.5])]}
        assert [r.label for r in report.summarize(runs)] == ["a", "b"]

    def test_foreign_csv_ignored(self, tmp_path):
        write_tree(tmp_path, {"rl": [(0, fake_run("rl", [0.4]))]})
        (tmp_path / "other.csv").write_text("a,b\n1,2\n")
        assert list(report.load_runs(tmp_path)) == ["rl"]

    def test_loose_file_uses_strategy_label(self, tmp_path):
        fake_run("conf", [0.3]).write_csv(tmp_path / "x.csv")
        assert list(report.load_runs(tmp_path)) == ["conf"]

    def test_no_metrics_is_error(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            report.load_runs(tmp_path)

    def test_mean_std_oracle(self):
        assert report.mean_std([1.0, 2.0, 3.0]) == (2.0, 1.0)


class TestSvg:
    def test_one_polyline_per_series(self):
        svg = report.line_chart({"a": [(1, 0.1), (2, 0.2)], "b": [(1, 0.3), (2, 0.1)], "c": [(1, 0.2)]},
                                "t", "x", "y")
        root = ET.fromstring(svg)
        lines = root.findall(f"{SVG}polyline")
        assert [p.get("data-series") for p in lines] == ["a", "b", "c"]
        assert len(lines[0].get("points").split()) == 2

    def test_points_inside_canvas(self):
        root = ET.fromstring(report.line_chart({"a": [(0, -5.0), (10, 7.0)]}, "t", "x", "y"))
        w, h = float(root.get("width")), float(root.get("height"))
        for pair in root.find(f"{SVG}polyline").get("points").split():
            x, y = map(float, pair.split(","))
            assert 0 <= x <= w and 0 <= y <= h

    def test_flat_series_does_not_divide_by_zero(self):
        ET.fromstring(report.line_chart({"a": [(1, 0.5), (1, 0.5)]}, "t", "x", "y"))

    def test_title_escaped(self):
        root = ET.fromstring(report.line_chart({}, "a < b & c", "x", "y"))
        assert any(t.text == "a < b & c" for t in root.iter(f"{SVG}text"))

    @pytest.mark.parametrize("M", [1, 2, 4])
    def test_weight_curves_count_two_m(self, M):
        root = ET.fromstring(report.weight_svg([fake_run("rl", [0.1, 0.2, 0.3], M=M)]))
        assert len(root.findall(f"{SVG}polyline")) == 2 * M

    def test_weight_curve_mean_over_runs(self):
        a, b = fake_run("rl", [0.1, 0.2], M=2), fake_run("rl", [0.1, 0.2], M=2)
        a.rows[0].w_l = [0.2, 0.8]
        b.rows[0].w_l = [0.4, 0.6]
        curve = report._mean_curve([a, b], lambda r: r.w_l[0])
        assert curve[0] == (1, pytest.approx(0.3))

    def test_unweighted_group_rejected(self):
        with pytest.raises(ValueError):
            report.weight_svg([fake_run("baseline", [0.1], weighted=False)])


def test_write_report_outputs(tmp_path):
    runs = {"rl": [fake_run("rl", [0.2, 0.4])], "baseline": [fake_run("baseline", [0.3, 0.3], weighted=False)]}
    written = report.write_report(runs, tmp_path)
    assert set(written) == {"table_txt", "table_csv", "accuracy_svg", "weights_rl"}
    acc = ET.parse(written["accuracy_svg"]).getroot()
    assert len(acc.findall(f"{SVG}polyline")) == 2
