"""Report persistence: delimited tables, per-sample prediction logs, figures.

CSV cells are written with repr so reruns with the same config and seed are
byte-identical and parsed values round-trip exactly. Figures render the same
tables with matplotlib for quick inspection; they live next to the CSVs.
"""

from __future__ import annotations

import json
import platform
from datetime import datetime, timezone
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from . import __version__
from .experiments import ExperimentConfig, ReportTable, SweepRow

_MODE_LABELS = {
    "none": "no transfer",
    "mean": "mean transfer",
    "variance": "variance transfer",
    "both": "mean & variance",
}
_METHOD_LABELS = {
    "adaptive_lda": "adaptive LDA",
    "adaptive_qda": "adaptive QDA",
    "proposed": "variance transfer",
}


def _fmt(value: float) -> str:
    return repr(float(value))


def _pack(mapping: dict) -> str:
    return "|".join(f"{k}={_fmt(v) if isinstance(v, float) else v}" for k, v in mapping.items())


def unpack_per_subject(cell: str) -> dict:
    """Inverse of the per-subject packing used in report CSVs."""
    if not cell:
        return {}
    return {k: float(v) for k, v in (item.split("=", 1) for item in cell.split("|"))}


def write_report_csv(table: ReportTable, path: str | Path) -> Path:
    path = Path(path)
    lines = [
        "dataset,method,calibration_fraction,mean_accuracy_pct,std_across_target_subjects_pct,"
        "per_subject_accuracy_pct,selected_hyperparams"
    ]
    for row in table.rows:
        lines.append(
            ",".join(
                [
                    row.dataset,
                    row.method,
                    _fmt(row.calibration_fraction),
                    _fmt(row.mean_accuracy),
                    _fmt(row.std_accuracy),
                    _pack(row.per_subject),
                    _pack(row.hyperparams),
                ]
            )
        )
    path.write_text("\n".join(lines) + "\n")
    return path


def write_sweep_csv(rows: Sequence[SweepRow], path: str | Path) -> Path:
    path = Path(path)
    lines = ["r,mean_accuracy_pct,ci95_halfwidth_pct,per_subject_accuracy_pct"]
    for row in rows:
        lines.append(
            ",".join(
                [_fmt(row.r), _fmt(row.mean_accuracy), _fmt(row.ci_halfwidth), _pack(row.per_subject)]
            )
        )
    path.write_text("\n".join(lines) + "\n")
    return path


def write_prediction_logs(logs: dict, out_dir: str | Path) -> None:
    """One CSV per (subject, method/mode, fraction): predictions/<subject>/<label>_cal<pct>.csv"""
    out_dir = Path(out_dir)
    for (subject, label, fraction), rows in logs.items():
        sub = out_dir / "predictions" / subject
        sub.mkdir(parents=True, exist_ok=True)
        pct = int(round(fraction * 100))
        lines = ["trial,row,true_label,predicted_label"]
        lines.extend(f"{t},{i},{y},{p}" for t, i, y, p in rows)
        (sub / f"{label}_cal{pct}.csv").write_text("\n".join(lines) + "\n")


def write_run_meta(cfg: ExperimentConfig, out_dir: str | Path, command: str) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    meta = {
        "command": command,
        "config": cfg.to_dict(),
        "config_sha256": cfg.config_hash(),
        "seed": cfg.seed,
        "versions": {
            "vartransfer": __version__,
            "numpy": np.__version__,
            "python": platform.python_version(),
        },
        "created_utc": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "aggregation": "mean and sample std across target subjects; "
        "sweep CI = 1.96*std/sqrt(#subjects)",
    }
    path = out_dir / "run_meta.json"
    path.write_text(json.dumps(meta, indent=1))
    return path


# ---------------------------------------------------------------------------
# Figures
# ---------------------------------------------------------------------------


def render_table_figure(table: ReportTable, path: str | Path, title: str) -> Path:
    """Grouped bars (one group per method/mode, one bar per calibration fraction)."""
    labels_map = _MODE_LABELS if table.kind == "ablation" else _METHOD_LABELS
    methods = list(dict.fromkeys(r.method for r in table.rows))
    fractions = sorted(set(r.calibration_fraction for r in table.rows))
    width = 0.8 / max(len(fractions), 1)
    fig, ax = plt.subplots(figsize=(7, 4))
    x = np.arange(len(methods))
    for j, frac in enumerate(fractions):
        means = [table.row(m, frac).mean_accuracy for m in methods]
        stds = [table.row(m, frac).std_accuracy for m in methods]
        ax.bar(
            x + (j - (len(fractions) - 1) / 2) * width,
            means,
            width,
            yerr=stds,
            capsize=3,
            label=f"{int(round(frac * 100))}% calibration",
        )
    ax.set_xticks(x)
    ax.set_xticklabels([labels_map.get(m, m) for m in methods])
    ax.set_ylabel("accuracy (%)")
    ax.set_ylim(0, 100)
    ax.set_title(title)
    ax.legend(frameon=False)
    ax.spines["top"].set_visible(False)
    ax.spines["right"].set_visible(False)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return Path(path)


def render_sweep_figure(rows: Sequence[SweepRow], path: str | Path, title: str) -> Path:
    """Accuracy vs transfer ratio with a 95% CI band; star marks r = 1."""
    pos = np.arange(len(rows))
    means = np.array([r.mean_accuracy for r in rows])
    half = np.array([r.ci_halfwidth for r in rows])
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(pos, means, marker="o", color="tab:blue")
    ax.fill_between(pos, means - half, means + half, alpha=0.25, color="tab:blue")
    for i, row in enumerate(rows):
        if row.r == 1.0:
            ax.plot(pos[i], means[i], marker="*", markersize=16, color="tab:orange", zorder=5)
    ax.set_xticks(pos)
    ax.set_xticklabels([f"{row.r:g}" for row in rows])
    ax.set_xlabel("transfer ratio r")
    ax.set_ylabel("accuracy (%)")
    ax.set_title(title)
    ax.spines["top"].set_visible(False)
    ax.spines["right"].set_visible(False)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return Path(path)
