"""Fairness, accuracy and attack metrics, and the ExperimentReport container."""
from dataclasses import dataclass, field

import numpy as np

from . import numkit
from .errors import DegenerateVariance
from .model import EvalReport, predict

SCHEMA_VERSION = 1


def fairness(standalone_acc, final_acc):
    """Pearson correlation between standalone and final accuracies, in percent.

    Returns None when either list has zero variance (fairness undefined).
    """
    try:
        return 100.0 * numkit.pearson(standalone_acc, final_acc)
    except DegenerateVariance:
        return None


def _src_predictions(m, test, src):
    labels = np.asarray(test.labels)
    sel = labels == src
    if not sel.any():
        raise ValueError(f"test set has no samples of class {src}")
    return predict(m, np.asarray(test.features)[sel])


def attack_success_rate(m, test, src, dst):
    """Fraction of src-class test samples predicted as dst."""
    return float(np.mean(_src_predictions(m, test, src) == dst))


def target_class_accuracy(m, test, src):
    return float(np.mean(_src_predictions(m, test, src) == src))


@dataclass
class ExperimentReport:
    fairness: float
    max_accuracy: float
    per_participant: dict
    standalone: dict
    honest_ids: list
    removed: dict
    rounds: list
    config_echo: dict
    attack_success_rate: float = None
    target_class_accuracy: float = None
    best_participant: int = None
    standalone_max_accuracy: float = None
    gradient_steps: dict = field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION

    def to_dict(self):
        return {
            "schema_version": self.schema_version,
            "fairness": self.fairness,
            "max_accuracy": self.max_accuracy,
            "best_participant": self.best_participant,
            "standalone_max_accuracy": self.standalone_max_accuracy,
            "attack_success_rate": self.attack_success_rate,
            "target_class_accuracy": self.target_class_accuracy,
            "honest_ids": list(self.honest_ids),
            "removed": {str(k): v for k, v in self.removed.items()},
            "per_participant": {str(k): v.to_dict() for k, v in self.per_participant.items()},
            "standalone": {str(k): v.to_dict() for k, v in self.standalone.items()},
            "gradient_steps": {str(k): v for k, v in self.gradient_steps.items()},
            "rounds": [r.to_dict() for r in self.rounds],
            "config_echo": self.config_echo,
        }

    @classmethod
    def from_dict(cls, d):
        from .orchestrator import RoundRecord
        return cls(
            schema_version=d["schema_version"],
            fairness=d["fairness"],
            max_accuracy=d["max_accuracy"],
            best_participant=d["best_participant"],
            standalone_max_accuracy=d["standalone_max_accuracy"],
            attack_success_rate=d["attack_success_rate"],
            target_class_accuracy=d["target_class_accuracy"],
            honest_ids=list(d["honest_ids"]),
            removed={int(k): v for k, v in d["removed"].items()},
            per_participant={int(k): EvalReport.from_dict(v) for k, v in d["per_participant"].items()},
            standalone={int(k): EvalReport.from_dict(v) for k, v in d["standalone"].items()},
            gradient_steps={int(k): v for k, v in d["gradient_steps"].items()},
            rounds=[RoundRecord.from_dict(r) for r in d["rounds"]],
            config_echo=d["config_echo"],
        )

    def honest_accuracies(self):
        return {i: self.per_participant[i].accuracy for i in self.honest_ids}


def build_report(cfg, participants, standalone, final, rounds, test, gradient_steps=None):
    honest = [p for p in participants if p.honest]
    has_adversaries = len(honest) < len(participants)
    # with adversaries present, honest participants that got pruned are left out
    counted = [p for p in honest if not (has_adversaries and p.removed_round is not None)]
    fair = None
    if len(counted) >= 2:
        fair = fairness([standalone[p.id].accuracy for p in counted],
                        [final[p.id].accuracy for p in counted])
    best = max(honest, key=lambda p: (final[p.id].accuracy, -p.id))
    report = ExperimentReport(
        fairness=fair,
        max_accuracy=final[best.id].accuracy,
        best_participant=best.id,
        standalone_max_accuracy=max(standalone[p.id].accuracy for p in honest),
        per_participant=dict(sorted(final.items())),
        standalone=dict(sorted(standalone.items())),
        honest_ids=[p.id for p in honest],
        removed={p.id: p.removed_round for p in participants if p.removed_round is not None},
        rounds=rounds,
        config_echo=cfg.to_dict(),
        gradient_steps=dict(sorted((gradient_steps or {}).items())),
    )
    flips = [p.adversary for p in participants if p.adversary.kind == "label_flip"]
    if flips:
        src, dst = flips[0].src_class, flips[0].dst_class
        report.attack_success_rate = attack_success_rate(best.model, test, src, dst)
        report.target_class_accuracy = target_class_accuracy(best.model, test, src)
    return report
