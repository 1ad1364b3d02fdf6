"""Report rendering: delimited tables, an aligned text summary, and figures.

Given a run report (and optionally a baseline for reliability deltas) this
writes, into one output directory:

* ``report.json``         - the full machine-readable report
* ``scores.csv``          - per-scenario Low/High/Overall columns, one per alpha
* ``cases.csv``           - one row per case
* ``reliability.csv``     - success rates and deltas
* ``summary.txt``         - aligned human-readable table
* ``scores_by_scenario.png`` and ``reliability.png`` - matplotlib figures
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .bench import ReliabilityStats, RunReport, compute_reliability, summarize_scores

DEFAULT_ALPHAS = (0.25, 0.5, 0.75)


def _pct(value) -> str:
    return "" if value is None else f"{value * 100:.2f}"


def write_cases_csv(report: RunReport, path: Path) -> None:
    fields = ["id", "scenario", "status", "iterations", "error_events", "spec_executed", "byte_equal", "s_low", "s_high", "s_vis", "error"]
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(fields)
        for case in report.cases:
            writer.writerow(
                [
                    case.get("id"),
                    case.get("scenario"),
                    case.get("status"),
                    case.get("iterations"),
                    case.get("error_events"),
                    int(bool(case.get("spec_executed"))),
                    int(bool(case.get("byte_equal"))),
                    _pct(case.get("s_low")),
                    _pct(case.get("s_high")),
                    _pct(case.get("s_vis")),
                    case.get("error") or "",
                ]
            )


def write_scores_csv(rows: list[dict], alphas, path: Path) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["scenario", "n", "low", "high"] + [f"overall@{a}" for a in alphas])
        for row in rows:
            writer.writerow(
                [row["scenario"], row["n"], _pct(row["low"]), _pct(row["high"])]
                + [_pct(row["overall"][str(a)]) for a in alphas]
            )


def write_reliability_csv(stats: ReliabilityStats, path: Path) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "value", "delta_vs_baseline"])
        writer.writerow(["task_success", f"{stats.task_success_rate:.2f}", "" if stats.task_success_delta is None else f"{stats.task_success_delta:+.2f}"])
        writer.writerow(["code_execution", f"{stats.code_execution_success_rate:.2f}", "" if stats.code_execution_delta is None else f"{stats.code_execution_delta:+.2f}"])


def format_summary(report: RunReport, rows: list[dict], stats: ReliabilityStats, alphas) -> str:
    lines = [
        f"ablation: {report.ablation}   alpha: {report.alpha}   seed: {report.seed}   cases: {len(report.cases)}",
        "",
        f"{'scenario':<10}{'n':>4}{'low%':>10}{'high%':>10}" + "".join(f"{'ov@' + str(a) + '%':>12}" for a in alphas),
    ]
    for row in rows:
        lines.append(
            f"{row['scenario']:<10}{row['n']:>4}{_pct(row['low']):>10}{_pct(row['high']):>10}"
            + "".join(f"{_pct(row['overall'][str(a)]):>12}" for a in alphas)
        )
    lines.append("")
    delta_task = "" if stats.task_success_delta is None else f" ({stats.task_success_delta:+.2f})"
    delta_exec = "" if stats.code_execution_delta is None else f" ({stats.code_execution_delta:+.2f})"
    lines.append(f"task success:    {stats.task_success_rate:.2f}%{delta_task}")
    lines.append(f"spec execution:  {stats.code_execution_success_rate:.2f}%{delta_exec}")
    return "\n".join(lines) + "\n"


def plot_scores(rows: list[dict], alpha: float, path: Path) -> None:
    scenarios = [r["scenario"] for r in rows]
    lows = [r["low"] * 100 for r in rows]
    highs = [r["high"] * 100 for r in rows]
    overalls = [r["overall"][str(alpha)] * 100 for r in rows]
    x = range(len(scenarios))
    width = 0.27
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.bar([i - width for i in x], lows, width, label="structural")
    ax.bar(list(x), highs, width, label="perceptual")
    ax.bar([i + width for i in x], overalls, width, label=f"overall (a={alpha})")
    ax.set_xticks(list(x))
    ax.set_xticklabels(scenarios)
    ax.set_ylabel("score (%)")
    ax.set_ylim(0, 100)
    ax.set_title("scores by scenario")
    ax.legend(loc="lower right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def plot_reliability(stats: ReliabilityStats, baseline: ReliabilityStats | None, path: Path) -> None:
    labels = ["task success", "spec execution"]
    ours = [stats.task_success_rate, stats.code_execution_success_rate]
    fig, ax = plt.subplots(figsize=(6, 4))
    width = 0.35
    x = range(len(labels))
    ax.bar([i - width / 2 for i in x], ours, width, label="this run")
    if baseline is not None:
        theirs = [baseline.task_success_rate, baseline.code_execution_success_rate]
        ax.bar([i + width / 2 for i in x], theirs, width, label="baseline")
    ax.set_xticks(list(x))
    ax.set_xticklabels(labels)
    ax.set_ylabel("rate (%)")
    ax.set_ylim(0, 105)
    ax.set_title("reliability")
    ax.legend(loc="lower right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def write_report(
    report: RunReport,
    out_dir: str,
    baseline: RunReport | None = None,
    alphas=DEFAULT_ALPHAS,
) -> dict:
    """Write every artifact; returns the paths written."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    rows = summarize_scores(report, alphas)
    stats = compute_reliability(report, baseline)
    baseline_stats = compute_reliability(baseline) if baseline is not None else None

    paths = {
        "report": out / "report.json",
        "cases": out / "cases.csv",
        "scores": out / "scores.csv",
        "reliability": out / "reliability.csv",
        "summary": out / "summary.txt",
        "scores_figure": out / "scores_by_scenario.png",
        "reliability_figure": out / "reliability.png",
    }
    paths["report"].write_text(report.to_json(), encoding="utf-8")
    write_cases_csv(report, paths["cases"])
    write_scores_csv(rows, alphas, paths["scores"])
    write_reliability_csv(stats, paths["reliability"])
    paths["summary"].write_text(format_summary(report, rows, stats, alphas), encoding="utf-8")
    plot_scores(rows, report.alpha if str(report.alpha) in {str(a) for a in alphas} else alphas[1], paths["scores_figure"])
    plot_reliability(stats, baseline_stats, paths["reliability_figure"])
    return {k: str(v) for k, v in paths.items()}
