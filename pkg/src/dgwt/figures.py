"""Figure and CSV companions to a pipeline report."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .pipeline import PipelineRun


def save_report_outputs(run: PipelineRun, outdir) -> list[Path]:
    """Write per-head discrepancy CSV plus two overview figures.

    Emits ``per_head_dgw.csv``, ``dgw_per_head.png`` and
    ``attention_views.png`` into ``outdir`` and returns the paths.
    """
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    report = run.report
    written = []

    csv_path = outdir / "per_head_dgw.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["head", "dgw", "converged"])
        for i, (v, c) in enumerate(zip(report.per_head_dgw,
                                       report.per_head_converged)):
            writer.writerow([i, format(v, ".17g"), c])
    written.append(csv_path)

    heads = len(report.per_head_dgw)
    fig, ax = plt.subplots(figsize=(1.2 + 0.6 * heads, 3.0))
    ax.bar(range(heads), report.per_head_dgw, color="#4878d0")
    ax.axhline(report.mean_dgw, color="#d65f5f", linestyle="--",
               label=f"mean = {report.mean_dgw:.4g}")
    ax.set_xlabel("head")
    ax.set_ylabel("directed GW")
    ax.set_xticks(range(heads))
    ax.legend(frameon=False)
    fig.tight_layout()
    bar_path = outdir / "dgw_per_head.png"
    fig.savefig(bar_path, dpi=150)
    plt.close(fig)
    written.append(bar_path)

    vols1 = run.result.volumes_view1
    vols2 = run.result.volumes_view2
    fig, axes = plt.subplots(heads, 2, figsize=(5.0, 1.9 * heads),
                             squeeze=False)
    for i in range(heads):
        for j, vols in enumerate((vols1, vols2)):
            img = vols[i].as_array().mean(axis=0)  # time-mean (h, w) map
            ax = axes[i][j]
            ax.imshow(img, cmap="viridis")
            ax.set_xticks([])
            ax.set_yticks([])
            if i == 0:
                ax.set_title(f"view {j + 1}", fontsize=9)
            if j == 0:
                ax.set_ylabel(f"head {i}", fontsize=9)
    fig.suptitle(
        f"query-averaged attention, beta = ({report.beta1:g}, {report.beta2:g})",
        fontsize=10)
    fig.tight_layout()
    views_path = outdir / "attention_views.png"
    fig.savefig(views_path, dpi=150)
    plt.close(fig)
    written.append(views_path)

    return written
