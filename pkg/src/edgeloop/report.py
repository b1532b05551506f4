"""Report rendering: CSV, aligned text tables and figure files.

The CSV schemas are part of the external interface and fixed:

* trade-off: ``augmented,image_size,batch_size,conv_blocks,fc1_input,fc2_input,param_count,test_accuracy,storage_mib``
* loop:      ``model,iteration,op_accuracy,storage_mib``

Figures are rendered headless to PNG next to the delimited output.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .bench import LoopReport, TradeoffReport

TRADEOFF_HEADER = [
    "augmented", "image_size", "batch_size", "conv_blocks",
    "fc1_input", "fc2_input", "param_count", "test_accuracy", "storage_mib",
]
LOOP_HEADER = ["model", "iteration", "op_accuracy", "storage_mib"]


def _acc(value) -> str:
    return "" if value is None else f"{value:.4f}"


def tradeoff_rows(report: TradeoffReport) -> list[list[str]]:
    return [
        [
            "yes" if r.augmented else "no",
            str(r.image_size),
            str(r.batch_size),
            str(r.conv_blocks),
            r.fc1_input,
            r.fc2_input,
            str(r.param_count),
            _acc(r.test_accuracy),
            f"{r.storage_mib:.4f}",
        ]
        for r in report.rows
    ]


def loop_rows(report: LoopReport) -> list[list[str]]:
    return [
        [r.model, str(r.iteration), f"{r.op_accuracy:.4f}", f"{r.storage_mib:.4f}"]
        for r in report.rows
    ]


def write_csv(path: str | Path, header: list[str], rows: list[list[str]]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
    return path


def format_table(header: list[str], rows: list[list[str]]) -> str:
    """Plain-text table with columns padded to their widest cell."""
    widths = [max(len(h), *(len(r[i]) for r in rows)) if rows else len(h)
              for i, h in enumerate(header)]
    def fmt(cells):
        return "  ".join(c.ljust(w) for c, w in zip(cells, widths)).rstrip()
    lines = [fmt(header), fmt(["-" * w for w in widths])]
    lines.extend(fmt(r) for r in rows)
    return "\n".join(lines) + "\n"


def tradeoff_figure(report: TradeoffReport, path: str | Path) -> Path:
    """Accuracy vs parameter count, one marker per benchmark row."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    ok = [r for r in report.rows if r.test_accuracy is not None]
    failed = [r for r in report.rows if r.test_accuracy is None]
    if ok:
        ax.scatter([r.param_count for r in ok], [100 * r.test_accuracy for r in ok],
                   s=48, zorder=3)
        for r in ok:
            ax.annotate(f"{r.conv_blocks} blk / {r.storage_mib:.2f} MiB",
                        (r.param_count, 100 * r.test_accuracy),
                        textcoords="offset points", xytext=(6, 4), fontsize=8)
    for r in failed:
        ax.axvline(r.param_count, color="tab:red", linestyle=":", alpha=0.6)
    ax.set_xscale("log")
    ax.set_xlabel("parameters")
    ax.set_ylabel("test accuracy [%]")
    ax.set_title("Accuracy vs model complexity")
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def loop_figure(report: LoopReport, path: str | Path) -> Path:
    """Grouped bars: operation-set accuracy per model and iteration."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    models = list(dict.fromkeys(r.model for r in report.rows))
    iterations = sorted({r.iteration for r in report.rows})
    acc = {(r.model, r.iteration): 100 * r.op_accuracy for r in report.rows}

    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    width = 0.8 / max(1, len(iterations))
    for j, it in enumerate(iterations):
        xs = [i + j * width for i in range(len(models))]
        ys = [acc.get((m, it), 0.0) for m in models]
        ax.bar(xs, ys, width=width, label=f"iteration {it}")
    ax.set_xticks([i + width * (len(iterations) - 1) / 2 for i in range(len(models))])
    ax.set_xticklabels(models)
    ax.set_ylabel("operation-set accuracy [%]")
    ax.set_ylim(0, 100)
    ax.set_title("Retraining loop: accuracy by iteration")
    ax.legend()
    ax.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def emit_tradeoff(report: TradeoffReport, out_dir: str | Path,
                  stem: str = "tradeoff") -> dict[str, Path]:
    """CSV + text table + figure for a trade-off report; returns the paths."""
    out_dir = Path(out_dir)
    rows = tradeoff_rows(report)
    csv_path = write_csv(out_dir / f"{stem}.csv", TRADEOFF_HEADER, rows)
    txt_path = out_dir / f"{stem}.txt"
    txt_path.write_text(format_table(TRADEOFF_HEADER, rows))
    fig_path = tradeoff_figure(report, out_dir / f"{stem}.png")
    return {"csv": csv_path, "txt": txt_path, "png": fig_path}


def emit_loop(report: LoopReport, out_dir: str | Path,
              stem: str = "loop") -> dict[str, Path]:
    """CSV + text table + figure for a loop report; returns the paths."""
    out_dir = Path(out_dir)
    rows = loop_rows(report)
    csv_path = write_csv(out_dir / f"{stem}.csv", LOOP_HEADER, rows)
    txt_path = out_dir / f"{stem}.txt"
    txt_path.write_text(format_table(LOOP_HEADER, rows))
    fig_path = loop_figure(report, out_dir / f"{stem}.png")
    return {"csv": csv_path, "txt": txt_path, "png": fig_path}
