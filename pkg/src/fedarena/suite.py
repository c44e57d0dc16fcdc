"""Stored scenario presets and the batch runner that compares frameworks on them."""
import csv
import io
import os
from concurrent.futures import ProcessPoolExecutor
from importlib import resources

import numpy as np
import yaml

from . import config as config_mod
from .orchestrator import run_experiment
from .reporting import fmt, write_outputs

SUMMARY_HEADER = ("scenario", "framework", "max_accuracy", "mean_honest_accuracy", "fairness",
                  "attack_success_rate", "target_class_accuracy", "removed")


def _preset_dir():
    return resources.files("fedarena") / "presets"


def preset_names():
    return sorted(p.name[:-5] for p in _preset_dir().iterdir()
                  if p.name.endswith(".yaml") and p.name != "suites.yaml")


def suite_table():
    return yaml.safe_load((_preset_dir() / "suites.yaml").read_text(encoding="utf-8"))


def preset_text(name):
    path = _preset_dir() / f"{name}.yaml"
    if not path.is_file():
        raise KeyError(name)
    return path.read_text(encoding="utf-8")


def load_preset(name, framework=None, check_paths=True):
    """Parse a stored preset, optionally swapping in another aggregator."""
    raw = yaml.safe_load(preset_text(name))
    if framework is not None:
        raw["aggregator"] = {"name": framework}
    return config_mod.from_dict(raw, check_paths=check_paths)


def expand(name):
    """(scenario, framework) pairs for a suite name or a single preset name."""
    suites = suite_table()
    if name in suites:
        s = suites[name]
        return [(sc, fw) for sc in s["scenarios"] for fw in s["frameworks"]]
    if name in preset_names():
        return [(name, None)]
    known = sorted(suites) + preset_names()
    raise KeyError(f"unknown suite or preset {name!r}; known: {', '.join(known)}")


def _summary_row(scenario, framework, report):
    honest = list(report.honest_accuracies().values())
    return (scenario, framework, fmt(report.max_accuracy), fmt(float(np.mean(honest))),
            fmt(report.fairness), fmt(report.attack_success_rate), fmt(report.target_class_accuracy),
            len(report.removed))


def _run_one(job):
    scenario, framework, out_root, seed = job
    cfg = load_preset(scenario, framework)
    if seed is not None:
        cfg = cfg.replace(seed=seed)
    report = run_experiment(cfg)
    name = f"{scenario}--{framework or cfg.aggregator['name']}"
    write_outputs(os.path.join(out_root, name), cfg, report)
    return _summary_row(scenario, cfg.aggregator["name"], report)


def run_suite(name, out_root, jobs=1, seed=None):
    """Run every config of a suite; returns the summary CSV text (also written to out_root)."""
    work = [(sc, fw, out_root, seed) for sc, fw in expand(name)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_run_one, work))
    else:
        rows = [_run_one(job) for job in work]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_HEADER)
    w.writerows(rows)
    os.makedirs(out_root, exist_ok=True)
    with open(os.path.join(out_root, "summary.csv"), "w", encoding="utf-8", newline="") as f:
        f.write(buf.getvalue())
    return buf.getvalue()
