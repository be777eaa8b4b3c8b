"""Summary CSV and per-run ROC point files."""
from __future__ import annotations

import csv
from pathlib import Path

from .audit import format_level, tpr_at_fpr
from .errors import EmptyInputError

BASE_COLUMNS = ["run_id", "variant", "defense", "clean_acc", "poison_acc", "acc_drop", "protocol", "auc"]


def _clean_baseline(runs):
    for run in runs:
        if run.get("variant") == "clean" and run.get("defense", "none") == "none":
            return run["test_acc"]
    for run in runs:
        if run.get("variant") == "clean":
            return run["test_acc"]
    return None


def summary_rows(runs, fpr_levels):
    """One row per (run, protocol); runs are dicts with ``run_id``, ``variant``,
    ``defense``, ``test_acc`` and ``reports`` (protocol name -> MiReport dict)."""
    if not runs:
        raise EmptyInputError("report needs at least one run")
    clean = _clean_baseline(runs)
    rows = []
    for run in sorted(runs, key=lambda r: str(r["run_id"])):
        # without a clean run in the batch each run is its own baseline
        base = clean if clean is not None else run["test_acc"]
        if run.get("variant") == "clean":
            base = run["test_acc"]
        for protocol in sorted(run["reports"]):
            rep = run["reports"][protocol]
            row = {
                "run_id": run["run_id"],
                "variant": run.get("variant", ""),
                "defense": run.get("defense", "none"),
                "clean_acc": base,
                "poison_acc": run["test_acc"],
                "acc_drop": base - run["test_acc"],
                "protocol": protocol,
                "auc": rep["auc"],
            }
            for lv in fpr_levels:
                row[f"tpr@{format_level(lv)}"] = tpr_at_fpr(rep["roc"], lv)
            rows.append(row)
    return rows


def emit_report(runs, fpr_levels, out_csv, roc_dir=None):
    """Write the summary CSV (and ROC files if ``roc_dir``); returns the rows."""
    rows = summary_rows(runs, fpr_levels)
    columns = BASE_COLUMNS + [f"tpr@{format_level(lv)}" for lv in fpr_levels]
    with open(out_csv, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    if roc_dir is not None:
        roc_dir = Path(roc_dir)
        roc_dir.mkdir(parents=True, exist_ok=True)
        for run in runs:
            for protocol, rep in run["reports"].items():
                write_roc(rep["roc"], roc_dir / f"{run['run_id']}_{protocol}_roc.csv")
    return rows


def write_roc(roc, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["fpr", "tpr"])
        for f, t in roc:
            w.writerow([repr(float(f)), repr(float(t))])
    return Path(path)


def run_record(run_id, variant, defense, test_acc, reports):
    """Build the dict :func:`emit_report` consumes from MiReport objects or dicts."""
    return {
        "run_id": run_id,
        "variant": variant,
        "defense": defense,
        "test_acc": float(test_acc),
        "reports": {name: (r.to_dict() if hasattr(r, "to_dict") else r) for name, r in reports.items()},
    }
