"""Tests for report records, their file formats, and figure rendering."""

import json

import pytest

from qkdsim.report import (
    ReportError,
    RunReport,
    aggregate_reports,
    read_reports_csv,
    read_reports_jsonl,
    render_run_figures,
    render_sweep_figure,
    write_reports_csv,
    write_reports_jsonl,
)

PNG_MAGIC = b"\x89PNG\r\n\x1a\n"


def make_report(**overrides):
    fields = dict(
        run_index=0,
        base_seed=42,
        pulse_count=10000,
        detected_count=900,
        sifted_count=450,
        sifted_fraction=0.5,
        qber=0.012,
        gains={"signal": 0.09, "weak": 0.02, "vacuum": 1e-5},
        y1_lower=0.07,
        e1_upper=0.03,
        key_rate=0.011,
        final_key_length=120,
        aborted=False,
        abort_reason="",
        eve_guess_accuracy=None,
        eve_known_fraction=0.0,
        leakage_bits=140.0,
        axis_value=None,
    )
    fields.update(overrides)
    return RunReport(**fields)


def make_aborted(**overrides):
    defaults = dict(
        qber=0.25, y1_lower=None, e1_upper=None, key_rate=0.0,
        final_key_length=0, aborted=True, abort_reason="qber-threshold",
    )
    defaults.update(overrides)
    return make_report(**defaults)


class TestRunReport:
    def test_abort_flag_consistency(self):
        with pytest.raises(ReportError, match="abort_reason"):
            make_report(aborted=True, abort_reason="")
        with pytest.raises(ReportError, match="did not abort"):
            make_report(aborted=False, abort_reason="stray")

    def test_gain_labels_must_be_strings(self):
        with pytest.raises(ReportError, match="labels"):
            make_report(gains={1: 0.5})

    def test_dict_round_trip(self):
        report = make_report(axis_value=4.0)
        assert RunReport.from_dict(report.to_dict()) == report

    def test_flat_dict_flattens_gains(self):
        flat = make_report().to_flat_dict()
        assert "gains" not in flat
        assert flat["gain:signal"] == 0.09
        assert flat["gain:vacuum"] == 1e-5
        assert RunReport.from_flat_dict(flat) == make_report()


class TestJsonl:
    def test_round_trip(self, tmp_path):
        reports = [make_report(), make_aborted(run_index=1),
                   make_report(run_index=2, qber=None,
                               aborted=True, abort_reason="no-sifted-bits",
                               final_key_length=0, key_rate=0.0)]
        path = tmp_path / "report.jsonl"
        write_reports_jsonl(path, reports)
        assert read_reports_jsonl(path) == reports

    def test_one_sorted_json_object_per_line(self, tmp_path):
        path = tmp_path / "report.jsonl"
        write_reports_jsonl(path, [make_report(), make_report(run_index=1)])
        lines = path.read_text(encoding="utf-8").splitlines()
        assert len(lines) == 2
        for line in lines:
            keys = list(json.loads(line))
            assert keys == sorted(keys)

    def test_deterministic_bytes(self, tmp_path):
        a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        write_reports_jsonl(a, [make_report()])
        write_reports_jsonl(b, [make_report()])
        assert a.read_bytes() == b.read_bytes()


class TestCsv:
    def test_round_trip_with_none_fields(self, tmp_path):
        reports = [
            make_report(axis_value=2.0),
            make_aborted(run_index=1, qber=None, eve_guess_accuracy=None,
                         axis_value=4.0),
        ]
        path = tmp_path / "report.csv"
        write_reports_csv(path, reports)
        assert read_reports_csv(path) == reports

    def test_columns_sorted(self, tmp_path):
        path = tmp_path / "report.csv"
        write_reports_csv(path, [make_report()])
        header = path.read_text(encoding="utf-8").splitlines()[0].split(",")
        assert header == sorted(header)

    def test_rows_must_share_gain_labels(self, tmp_path):
        rows = [make_report(), make_report(run_index=1, gains={"only": 0.1})]
        with pytest.raises(ReportError, match="disagree"):
            write_reports_csv(tmp_path / "report.csv", rows)

    def test_bool_and_int_types_survive(self, tmp_path):
        path = tmp_path / "report.csv"
        write_reports_csv(path, [make_aborted()])
        back = read_reports_csv(path)[0]
        assert back.aborted is True
        assert isinstance(back.run_index, int)
        assert isinstance(back.leakage_bits, float)


class TestAggregate:
    def test_mixed_runs(self):
        reports = [make_report(final_key_length=100),
                   make_report(run_index=1, final_key_length=140),
                   make_aborted(run_index=2)]
        summary = aggregate_reports(reports)
        assert summary["runs"] == 3
        assert summary["aborted_runs"] == 1
        assert summary["abort_fraction"] == pytest.approx(1 / 3)
        assert summary["total_final_key_bits"] == 240
        assert summary["mean_key_rate"] == pytest.approx(0.011)
        assert summary["mean_qber"] == pytest.approx((0.012 + 0.012 + 0.25) / 3)

    def test_all_aborted_without_estimates(self):
        reports = [make_aborted(qber=None)]
        summary = aggregate_reports(reports)
        assert summary["mean_qber"] is None
        assert summary["mean_key_rate"] == 0.0

    def test_empty_rejected(self):
        with pytest.raises(ReportError):
            aggregate_reports([])


class TestFigures:
    def test_run_figures_written(self, tmp_path):
        reports = [make_report(run_index=i, qber=0.01 + 0.001 * i)
                   for i in range(5)] + [make_aborted(run_index=5)]
        paths = render_run_figures(reports, tmp_path, abort_qber=0.11)
        assert [p.name for p in paths] == ["report.qber.png", "report.rate.png"]
        for path in paths:
            data = path.read_bytes()
            assert data.startswith(PNG_MAGIC)
            assert len(data) > 1000

    def test_run_figures_need_rows(self, tmp_path):
        with pytest.raises(ReportError):
            render_run_figures([], tmp_path)

    def test_sweep_figure_loglog_case(self, tmp_path):
        points = [(float(v), [make_report(key_rate=0.1 / v)])
                  for v in (1, 2, 4, 8)]
        paths = render_sweep_figure(points, tmp_path, axis_label="length")
        assert [p.name for p in paths] == ["sweep.rate.png"]
        assert paths[0].read_bytes().startswith(PNG_MAGIC)

    def test_sweep_figure_falls_back_when_rates_vanish(self, tmp_path):
        points = [(1.0, [make_aborted()]), (2.0, [make_aborted()])]
        paths = render_sweep_figure(points, tmp_path)
        assert paths[0].exists()

    def test_sweep_figure_needs_points(self, tmp_path):
        with pytest.raises(ReportError):
            render_sweep_figure([], tmp_path)
