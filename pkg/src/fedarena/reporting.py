"""Writing run outputs: rounds.csv, report.json and the resolved config."""
import csv
import io
import json
import math
import os

from . import config as config_mod
from .metrics import ExperimentReport

ROUNDS_HEADER = ("round", "participant_id", "reputation", "accuracy", "divergence", "removed")


def fmt(x):
    """Six significant digits; blank for missing values."""
    if x is None:
        return ""
    if isinstance(x, float) and math.isnan(x):
        return "nan"
    return f"{x:.6g}"


def rounds_rows(rounds):
    """One row per round per participant that was active when the round started."""
    for rec in rounds:
        removed = set(rec.removed)
        for i in rec.participants:
            rep = rec.removed_reputations.get(i) if i in removed else rec.reputations.get(i)
            yield (rec.round, i, fmt(rep), fmt(rec.per_participant_accuracy.get(i)),
                   fmt(rec.divergence.get(i)), 1 if i in removed else 0)


def rounds_csv(rounds):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(ROUNDS_HEADER)
    w.writerows(rounds_rows(rounds))
    return buf.getvalue()


def report_json(report):
    return json.dumps(report.to_dict(), indent=2, sort_keys=False) + "\n"


def load_report(path):
    with open(path, encoding="utf-8") as f:
        return ExperimentReport.from_dict(json.load(f))


def write_outputs(out_dir, cfg, report):
    """Write the three run files into out_dir and return their paths."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "rounds": os.path.join(out_dir, "rounds.csv"),
        "report": os.path.join(out_dir, "report.json"),
        "config": os.path.join(out_dir, "config_echo.yaml"),
    }
    contents = {
        "rounds": rounds_csv(report.rounds),
        "report": report_json(report),
        "config": config_mod.dumps(cfg),
    }
    for key, path in paths.items():
        # newline="" keeps LF endings on every platform
        with open(path, "w", encoding="utf-8", newline="") as f:
            f.write(contents[key])
    return paths


def read_rounds(path):
    """Parse rounds.csv back into a list of dicts with typed values."""
    out = []
    with open(path, encoding="utf-8", newline="") as f:
        for row in csv.DictReader(f):
            out.append({
                "round": int(row["round"]),
                "participant_id": int(row["participant_id"]),
                "reputation": float(row["reputation"]) if row["reputation"] else None,
                "accuracy": float(row["accuracy"]) if row["accuracy"] else None,
                "divergence": float(row["divergence"]) if row["divergence"] else None,
                "removed": row["removed"] == "1",
            })
    return out
