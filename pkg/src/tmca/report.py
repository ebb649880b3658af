"""Render training-run metrics into delimited tables and figure files."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")  # headless: never require a display
import matplotlib.pyplot as plt

METRIC_COLUMNS = ["epoch", "lr", "loss_total", "loss_seg", "loss_ca", "val_jaccard", "val_dice", "val_acc"]
MISSING = "-"


class ReportError(ValueError):
    pass


def load_history(run_dir: str | Path) -> list[dict]:
    """Parse metrics.jsonl from a run directory; malformed lines raise."""
    path = Path(run_dir) / "metrics.jsonl"
    if not path.is_file():
        raise ReportError(f"no metrics.jsonl under {run_dir}")
    entries = []
    for ln, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            entries.append(json.loads(line))
        except json.JSONDecodeError as err:
            raise ReportError(f"{path}:{ln}: {err}") from err
    if not entries:
        raise ReportError(f"{path} holds no epochs")
    return entries


def _cell(entry: dict, key: str) -> str:
    v = entry.get(key)
    if v is None:
        return MISSING
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def write_csv(entries: list[dict], path: Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRIC_COLUMNS)
        for e in entries:
            writer.writerow([_cell(e, k) for k in METRIC_COLUMNS])


def write_markdown(runs: dict[str, list[dict]], path: Path) -> None:
    lines = ["# Training report", ""]
    for name, entries in sorted(runs.items()):
        last = entries[-1]
        lines += [f"## {name}", ""]
        lines.append("| " + " | ".join(METRIC_COLUMNS) + " |")
        lines.append("|" + "---|" * len(METRIC_COLUMNS))
        for e in entries:
            lines.append("| " + " | ".join(_cell(e, k) for k in METRIC_COLUMNS) + " |")
        lines += [
            "",
            f"Final epoch {_cell(last, 'epoch')}: loss {_cell(last, 'loss_total')}, "
            f"val Dice {_cell(last, 'val_dice')}%.",
            "",
        ]
    path.write_text("\n".join(lines), encoding="utf-8")


def _series(entries: list[dict], key: str) -> tuple[list[int], list[float]]:
    xs, ys = [], []
    for e in entries:
        v = e.get(key)
        if v is not None:
            xs.append(e["epoch"])
            ys.append(v)
    return xs, ys


def render_figures(runs: dict[str, list[dict]], fig_dir: Path) -> list[Path]:
    fig_dir.mkdir(parents=True, exist_ok=True)
    written = []

    fig, ax = plt.subplots(figsize=(6, 4))
    for name, entries in sorted(runs.items()):
        for key, style in (("loss_total", "-"), ("loss_seg", "--"), ("loss_ca", ":")):
            xs, ys = _series(entries, key)
            if xs:
                ax.plot(xs, ys, style, label=f"{name} {key}")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.legend(fontsize=7)
    ax.set_title("Training losses")
    fig.tight_layout()
    out = fig_dir / "loss_curves.png"
    fig.savefig(out, dpi=120)
    plt.close(fig)
    written.append(out)

    fig, ax = plt.subplots(figsize=(6, 4))
    any_val = False
    for name, entries in sorted(runs.items()):
        xs, ys = _series(entries, "val_dice")
        if xs:
            ax.plot(xs, ys, label=name)
            any_val = True
    ax.set_xlabel("epoch")
    ax.set_ylabel("val Dice (%)")
    ax.set_title("Validation Dice")
    if any_val:
        ax.legend(fontsize=7)
    else:
        ax.text(0.5, 0.5, "no validation metrics", ha="center", va="center", transform=ax.transAxes)
    fig.tight_layout()
    out = fig_dir / "val_dice.png"
    fig.savefig(out, dpi=120)
    plt.close(fig)
    written.append(out)
    return written


def build_report(run_dirs: list[str | Path], out_dir: str | Path) -> dict:
    """Aggregate one or more runs into markdown + CSV + figures.

    Re-running with the same inputs overwrites the same files in place.
    """
    if not run_dirs:
        raise ReportError("no run directories given")
    runs: dict[str, list[dict]] = {}
    for rd in run_dirs:
        rd = Path(rd)
        name = rd.name or str(rd)
        if name in runs:
            raise ReportError(f"duplicate run name {name!r}")
        runs[name] = load_history(rd)

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_markdown(runs, out_dir / "report.md")
    for name, entries in runs.items():
        write_csv(entries, out_dir / f"{name}_metrics.csv")
    figures = render_figures(runs, out_dir / "figures")
    return {
        "runs": sorted(runs),
        "markdown": str(out_dir / "report.md"),
        "csv": [str(out_dir / f"{n}_metrics.csv") for n in sorted(runs)],
        "figures": [str(p) for p in figures],
    }
