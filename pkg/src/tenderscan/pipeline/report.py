"""Model comparison: metrics table, selection, per-epoch curves and figures."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from ..neuralnet.metrics import Metrics
from ..neuralnet.training import read_history_csv, write_history_csv

TABLE_FIELDS = ["arch", "epochs", "accuracy", "precision", "recall", "f1"]


class MissingRun(LookupError):
    pass


@dataclass
class RunSummary:
    """Held-out metrics of one architecture at one checkpoint."""

    arch: str
    epochs: int
    accuracy: float
    precision: float
    recall: float
    f1: float
    history: List[dict] = field(default_factory=list)

    @property
    def name(self) -> str:
        return f"{self.arch}@{self.epochs}"

    @classmethod
    def from_metrics(cls, arch: str, epochs: int, m: Metrics, history=None) -> "RunSummary":
        return cls(arch, epochs, m.accuracy, m.precision, m.recall, m.f1, list(history or []))


@dataclass
class ComparisonReport:
    rows: List[RunSummary]
    selected: RunSummary

    def table_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TABLE_FIELDS + ["selected"])
        for r in self.rows:
            w.writerow([r.arch, r.epochs, f"{r.accuracy:.4f}", f"{r.precision:.4f}",
                        f"{r.recall:.4f}", f"{r.f1:.4f}", int(r is self.selected)])
        return buf.getvalue()


def selection_key(r: RunSummary):
    # higher F1, then recall, then accuracy; fixed name order settles exact ties
    return (-r.f1, -r.recall, -r.accuracy, r.arch, r.epochs)


def compare_models_report(runs: Iterable[RunSummary],
                          required: Optional[Sequence[Tuple[str, int]]] = None) -> ComparisonReport:
    """Tabulate runs and select the best configuration.

    ``required`` lists (arch, epochs) slots that must be present.
    """
    runs = list(runs)
    if not runs:
        raise MissingRun("no runs to compare")
    have = {(r.arch, r.epochs) for r in runs}
    missing = [slot for slot in (required or ()) if tuple(slot) not in have]
    if missing:
        raise MissingRun("missing run(s): " + ", ".join(f"{a}@{e}" for a, e in missing))
    rows = sorted(runs, key=lambda r: (r.epochs, r.arch))
    selected = min(rows, key=selection_key)
    return ComparisonReport(rows, selected)


def read_table_csv(path) -> List[RunSummary]:
    """Runs from a metrics table (columns arch, epochs, accuracy, precision, recall, f1)."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(TABLE_FIELDS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: missing column(s) {sorted(missing)}")
        return [RunSummary(row["arch"], int(row["epochs"]), float(row["accuracy"]),
                           float(row["precision"]), float(row["recall"]), float(row["f1"]))
                for row in reader]


def load_training_runs(run_dir) -> List[RunSummary]:
    """Collect ``<arch>-checkpoints.json`` and ``<arch>-history.csv`` written by training."""
    run_dir = Path(run_dir)
    runs = []
    for meta in sorted(run_dir.glob("*-checkpoints.json")):
        arch = meta.name[: -len("-checkpoints.json")]
        hist_path = run_dir / f"{arch}-history.csv"
        history = read_history_csv(hist_path) if hist_path.exists() else []
        for epochs, m in json.loads(meta.read_text()).items():
            runs.append(RunSummary(arch, int(epochs), m["accuracy"], m["precision"], m["recall"],
                                   m["f1"], [h for h in history if h["epoch"] <= int(epochs)]))
    return runs


def _curve_figure(run: RunSummary, path: Path) -> Path:
    ep = [h["epoch"] for h in run.history]
    fig, (ax_acc, ax_loss) = plt.subplots(1, 2, figsize=(9, 3.5))
    ax_acc.plot(ep, [h["train_acc"] for h in run.history], label="train")
    ax_acc.plot(ep, [h["test_acc"] for h in run.history], label="held-out")
    ax_acc.set_xlabel("epoch")
    ax_acc.set_ylabel("accuracy")
    ax_acc.legend()
    ax_loss.plot(ep, [h["train_loss"] for h in run.history], label="train")
    ax_loss.plot(ep, [h["test_loss"] for h in run.history], label="held-out")
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("loss")
    ax_loss.legend()
    fig.suptitle(run.name)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path


def _comparison_figure(report: ComparisonReport, path: Path) -> Path:
    metrics = ["accuracy", "precision", "recall", "f1"]
    n = len(report.rows)
    width = 0.8 / max(n, 1)
    fig, ax = plt.subplots(figsize=(8, 4))
    for i, r in enumerate(report.rows):
        xs = [j + i * width for j in range(len(metrics))]
        ax.bar(xs, [getattr(r, m) for m in metrics], width, label=r.name)
    ax.set_xticks([j + 0.4 - width / 2 for j in range(len(metrics))])
    ax.set_xticklabels(metrics)
    lo = min(getattr(r, m) for r in report.rows for m in metrics)
    ax.set_ylim(max(0.0, lo - 0.01), 1.0)
    ax.set_title(f"selected: {report.selected.name}")
    ax.legend(fontsize="small", ncol=2)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path


def write_report(report: ComparisonReport, out_dir) -> Dict[str, Path]:
    """Write the table CSV, per-run curve CSVs and PNG figures into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {"table": out / "comparison.csv"}
    files["table"].write_text(report.table_csv())
    files["comparison_plot"] = _comparison_figure(report, out / "comparison.png")
    for r in report.rows:
        if not r.history:
            continue
        files[f"{r.name}:curve"] = write_history_csv(r.history, out / f"{r.arch}-{r.epochs:03d}-curve.csv")
        files[f"{r.name}:plot"] = _curve_figure(r, out / f"{r.arch}-{r.epochs:03d}-curve.png")
    return files
