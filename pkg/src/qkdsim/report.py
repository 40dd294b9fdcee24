"""Run reports: one record per session, serialization, and figures.

A :class:`RunReport` is the flat, JSON-friendly summary of one session:
counts, the estimated error rate, per-class gains, decoy bounds, the
key rate, and how the run ended.  Reports round-trip through JSON lines
(:func:`write_reports_jsonl`) and through a delimited table
(:func:`write_reports_csv`); :func:`aggregate_reports` recomputes the
experiment-level numbers from the rows, so the files remain the source
of truth.  :func:`render_run_figures` and :func:`render_sweep_figure`
draw the standard plots next to the tabular output.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = [
    "ReportError",
    "RunReport",
    "aggregate_reports",
    "read_reports_csv",
    "read_reports_jsonl",
    "render_run_figures",
    "render_sweep_figure",
    "write_reports_csv",
    "write_reports_jsonl",
]

logger = logging.getLogger(__name__)


class ReportError(ValueError):
    """Raised for unserializable or inconsistent report data."""


@dataclass(frozen=True)
class RunReport:
    """Summary of one executed session.

    ``qber`` is the publicly estimated error rate (None when the run
    aborted before estimation), ``gains`` maps intensity-class labels
    to observed gains, and ``y1_lower``/``e1_upper`` carry the decoy
    bounds when they were computed.  ``axis_value`` records the swept
    parameter for sweep points and stays None for plain runs.
    """

    run_index: int
    base_seed: int
    pulse_count: int
    detected_count: int
    sifted_count: int
    sifted_fraction: float
    qber: float | None
    gains: dict
    y1_lower: float | None
    e1_upper: float | None
    key_rate: float
    final_key_length: int
    aborted: bool
    abort_reason: str
    eve_guess_accuracy: float | None
    eve_known_fraction: float
    leakage_bits: float
    axis_value: float | None = None

    def __post_init__(self):
        if self.aborted and not self.abort_reason:
            raise ReportError("aborted runs need an abort_reason")
        if not self.aborted and self.abort_reason:
            raise ReportError("abort_reason given for a run that did not abort")
        for label in self.gains:
            if not isinstance(label, str):
                raise ReportError("gain labels must be strings")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        return cls(**data)

    def to_flat_dict(self):
        """Dictionary with gains flattened for delimited output."""
        data = self.to_dict()
        gains = data.pop("gains")
        for label, value in gains.items():
            data[f"gain:{label}"] = value
        return data

    @classmethod
    def from_flat_dict(cls, data):
        gains = {}
        rest = {}
        for key, value in data.items():
            if key.startswith("gain:"):
                gains[key[len("gain:"):]] = value
            else:
                rest[key] = value
        rest["gains"] = gains
        return cls(**rest)


def write_reports_jsonl(path, reports):
    """Write one sorted-key JSON object per line; returns the path."""
    path = Path(path)
    with open(path, "w", encoding="utf-8") as handle:
        for report in reports:
            handle.write(json.dumps(report.to_dict(), sort_keys=True))
            handle.write("\n")
    logger.debug("wrote %d report rows to %s", len(reports), path)
    return path


def read_reports_jsonl(path):
    reports = []
    with open(path, "r", encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if line:
                reports.append(RunReport.from_dict(json.loads(line)))
    return reports


_INT_FIELDS = ("run_index", "base_seed", "pulse_count", "detected_count",
               "sifted_count", "final_key_length")
_FLOAT_FIELDS = ("sifted_fraction", "key_rate", "eve_known_fraction",
                 "leakage_bits")
_OPTIONAL_FLOAT_FIELDS = ("qber", "y1_lower", "e1_upper",
                          "eve_guess_accuracy", "axis_value")
_BOOL_FIELDS = ("aborted",)


def write_reports_csv(path, reports):
    """Write the delimited report table; returns the path.

    All rows must share one column set (same intensity classes), and
    columns are sorted so repeated writes are byte-identical.
    """
    if not reports:
        raise ReportError("no report rows to write")
    rows = [r.to_flat_dict() for r in reports]
    columns = sorted(rows[0])
    for row in rows[1:]:
        if sorted(row) != columns:
            raise ReportError("report rows disagree on their columns")
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=columns)
        writer.writeheader()
        for row in rows:
            writer.writerow({
                k: ("" if v is None else v) for k, v in row.items()
            })
    logger.debug("wrote %d report rows to %s", len(reports), path)
    return path


def read_reports_csv(path):
    reports = []
    with open(path, "r", encoding="utf-8", newline="") as handle:
        for row in csv.DictReader(handle):
            parsed = {}
            for key, raw in row.items():
                if key in _INT_FIELDS:
                    parsed[key] = int(raw)
                elif key in _FLOAT_FIELDS:
                    parsed[key] = float(raw)
                elif key in _OPTIONAL_FLOAT_FIELDS:
                    parsed[key] = float(raw) if raw != "" else None
                elif key in _BOOL_FIELDS:
                    parsed[key] = raw == "True"
                elif key.startswith("gain:"):
                    parsed[key] = float(raw)
                else:
                    parsed[key] = raw
            reports.append(RunReport.from_flat_dict(parsed))
    return reports


def aggregate_reports(reports):
    """Experiment-level numbers recomputed from the per-run rows."""
    if not reports:
        raise ReportError("cannot aggregate zero reports")
    aborted = [r for r in reports if r.aborted]
    finished = [r for r in reports if not r.aborted]
    qbers = [r.qber for r in reports if r.qber is not None]
    summary = {
        "runs": len(reports),
        "aborted_runs": len(aborted),
        "abort_fraction": len(aborted) / len(reports),
        "total_final_key_bits": int(sum(r.final_key_length for r in reports)),
        "mean_qber": float(np.mean(qbers)) if qbers else None,
        "mean_key_rate": (float(np.mean([r.key_rate for r in finished]))
                          if finished else 0.0),
        "mean_sifted_fraction": (
            float(np.mean([r.sifted_fraction for r in finished]))
            if finished else 0.0),
    }
    return summary


def render_run_figures(reports, out_dir, stem="report", abort_qber=None):
    """Draw the per-run error-rate and key-rate figures.

    Returns the list of written paths.
    """
    if not reports:
        raise ReportError("no report rows to plot")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    indices = [r.run_index for r in reports]
    written = []

    fig, ax = plt.subplots(figsize=(6.0, 3.6))
    qbers = [r.qber if r.qber is not None else float("nan") for r in reports]
    colors = ["#b03030" if r.aborted else "#30609c" for r in reports]
    ax.scatter(indices, qbers, c=colors, s=24)
    if abort_qber is not None:
        ax.axhline(abort_qber, color="#b03030", linestyle="--", linewidth=1,
                   label=f"abort threshold {abort_qber:.3f}")
        ax.legend(loc="best", fontsize=8)
    ax.set_xlabel("run")
    ax.set_ylabel("estimated error rate")
    ax.set_title("Quantum bit error rate per run")
    fig.tight_layout()
    qber_path = out_dir / f"{stem}.qber.png"
    fig.savefig(qber_path, dpi=120)
    plt.close(fig)
    written.append(qber_path)

    fig, ax = plt.subplots(figsize=(6.0, 3.6))
    ax.bar(indices, [r.key_rate for r in reports], color="#30609c")
    ax.set_xlabel("run")
    ax.set_ylabel("secret bits per pulse")
    ax.set_title("Key rate per run")
    fig.tight_layout()
    rate_path = out_dir / f"{stem}.rate.png"
    fig.savefig(rate_path, dpi=120)
    plt.close(fig)
    written.append(rate_path)
    logger.debug("rendered %d figures into %s", len(written), out_dir)
    return written


def render_sweep_figure(points, out_dir, stem="sweep", axis_label=None):
    """Draw mean key rate against the swept value (log-log when possible).

    ``points`` is a list of ``(value, [RunReport, ...])`` pairs.
    Returns the list of written paths.
    """
    if not points:
        raise ReportError("no sweep points to plot")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    values = [float(v) for v, _ in points]
    rates = []
    for _, reports in points:
        finished = [r.key_rate for r in reports if not r.aborted]
        rates.append(float(np.mean(finished)) if finished else 0.0)

    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    positive = all(v > 0 for v in values) and all(r > 0 for r in rates)
    if positive:
        ax.loglog(values, rates, marker="o", color="#30609c")
    else:
        ax.plot(values, rates, marker="o", color="#30609c")
    ax.set_xlabel(axis_label or "swept value")
    ax.set_ylabel("mean secret bits per pulse")
    ax.set_title("Key rate across the sweep")
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    path = out_dir / f"{stem}.rate.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return [path]
