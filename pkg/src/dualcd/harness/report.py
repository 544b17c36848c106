"""Report files: JSON, an aligned text table and a bar chart of the metrics."""
from __future__ import annotations

import json
from pathlib import Path

from ..evaluation import METRICS, TABLE_HEADERS, MetricReport, format_table

REPORT_FILES = {"json": "report.json", "table": "report.txt", "plot": "metrics.png"}


def plot_metrics(reports: list[MetricReport], path) -> None:
    """One bar panel per metric, one bar per (model, scenario) with std error bars."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    labels = [f"{r.model}\n{r.scenario}" for r in reports]
    fig, axes = plt.subplots(1, len(METRICS), figsize=(4 * len(METRICS), 3.5), squeeze=False)
    for ax, metric in zip(axes[0], METRICS):
        means = [getattr(r, metric).mean or 0.0 for r in reports]
        stds = [getattr(r, metric).std or 0.0 for r in reports]
        ax.bar(range(len(reports)), means, yerr=stds, capsize=3, color="#4c72b0")
        ax.set_xticks(range(len(reports)))
        ax.set_xticklabels(labels, fontsize=7)
        ax.set_ylim(0, 1)
        ax.set_title(TABLE_HEADERS[metric])
    fig.tight_layout()
    # fixed metadata keeps the image bytes reproducible
    fig.savefig(path, dpi=100, metadata={"Software": None})
    plt.close(fig)


def emit_report(reports, outdir, report_json: str | None = None) -> dict:
    """Write ``report.json``, ``report.txt`` and ``metrics.png`` into ``outdir``."""
    if isinstance(reports, MetricReport):
        reports = [reports]
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {k: out / v for k, v in REPORT_FILES.items()}
    if report_json is None:
        report_json = json.dumps({"results": [r.to_dict() for r in reports]}, indent=2, sort_keys=True) + "\n"
    paths["json"].write_text(report_json, encoding="utf-8")
    paths["table"].write_text(format_table(reports), encoding="utf-8")
    plot_metrics(reports, paths["plot"])
    return paths
