"""Evaluation statistics and the metrics/summary CSV files."""

import csv
import math
import os
from dataclasses import dataclass

import numpy as np

METRICS_HEADER = ["timestep", "mean_reward", "std_reward", "ci_width", "n"]
SUMMARY_HEADER = ["final_performance_mean", "final_performance_std",
                  "sample_efficiency_timesteps", "n_evaluations"]
NOT_STABILIZED = "not-stabilized"
FINAL_WINDOW = 20


def mean_std(values):
    """Mean and population std, computed on values shifted by the first one so a
    constant series gives exactly (value, 0)."""
    v = np.asarray(values, dtype=np.float64)
    d = v - v[0]
    return float(v[0] + np.mean(d)), float(np.std(d))


def ci_width(std, n):
    return 2.0 * std / math.sqrt(n)


@dataclass(frozen=True)
class EvalReport:
    timestep: int
    mean_reward: float
    std_reward: float
    ci_width: float
    n: int

    @classmethod
    def from_returns(cls, timestep, returns):
        # Sorted so the statistics do not depend on rollout completion order.
        r = np.sort(np.asarray(returns, dtype=np.float64))
        if r.size < 2:
            raise ValueError("need at least 2 episode returns")
        mean, std = mean_std(r)
        return cls(int(timestep), mean, std, ci_width(std, r.size), int(r.size))


@dataclass(frozen=True)
class RunSummary:
    final_performance_mean: float
    final_performance_std: float
    sample_efficiency_timesteps: object  # int, or None when not stabilized
    n_evaluations: int


def final_performance(reports, window=FINAL_WINDOW):
    """Mean and population std of mean_reward over exactly the last ``window`` reports."""
    if len(reports) < window:
        raise ValueError(f"final performance needs at least {window} evaluations, got {len(reports)}")
    return mean_std([r.mean_reward for r in reports[-window:]])


def sample_efficiency(reports, window=10, rel_threshold=0.05):
    """Timestep of the first evaluation closing a window whose spread is small.

    A window of ``window`` consecutive mean rewards is stable when its std is at
    most ``rel_threshold`` times the absolute value of its mean. Returns None if
    no window qualifies.
    """
    if window < 2:
        raise ValueError("window must be >= 2")
    v = np.array([r.mean_reward for r in reports], dtype=np.float64)
    for i in range(window - 1, len(v)):
        mean, std = mean_std(v[i - window + 1:i + 1])
        if std <= rel_threshold * abs(mean):
            return reports[i].timestep
    return None


def summarize(reports, window=10, rel_threshold=0.05):
    if len(reports) >= FINAL_WINDOW:
        mean, std = final_performance(reports)
    else:
        mean = std = float("nan")
    return RunSummary(mean, std, sample_efficiency(reports, window, rel_threshold), len(reports))


def fmt(x):
    """Fixed 5-decimal rounding with trailing zeros dropped."""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if math.isnan(x):
        return "NA"
    s = f"{x:.5f}".rstrip("0").rstrip(".")
    return "0" if s == "-0" else s


def _write_rows(path, header, rows):
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def emit_metrics(run_dir, reports, summary=None):
    os.makedirs(run_dir, exist_ok=True)
    rows = [[fmt(r.timestep), fmt(r.mean_reward), fmt(r.std_reward), fmt(r.ci_width), fmt(r.n)]
            for r in reports]
    metrics_path = os.path.join(run_dir, "metrics.csv")
    _write_rows(metrics_path, METRICS_HEADER, rows)
    if summary is None:
        summary = summarize(reports)
    eff = summary.sample_efficiency_timesteps
    _write_rows(os.path.join(run_dir, "summary.csv"), SUMMARY_HEADER,
                [[fmt(summary.final_performance_mean), fmt(summary.final_performance_std),
                  NOT_STABILIZED if eff is None else str(eff), str(summary.n_evaluations)]])
    return metrics_path


def read_metrics(path):
    with open(path, encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return [EvalReport(int(r["timestep"]), float(r["mean_reward"]), float(r["std_reward"]),
                       float(r["ci_width"]), int(r["n"])) for r in rows]
