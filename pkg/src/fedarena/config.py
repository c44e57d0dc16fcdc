"""Experiment configuration: strict YAML parsing, defaults, validation.

A config file is a YAML mapping. Unknown keys anywhere are rejected so a
typo cannot silently change an adversary scenario. Example::

    dataset: {kind: mnist, dir: /data/mnist}
    split: {scheme: powerlaw, participants: 10, total_examples: 6000}
    aggregator: {name: rffl}
    adversaries:
      - {count: 2, kind: free_rider}
"""
import copy
import os
from dataclasses import asdict, dataclass, field

import yaml

from .adversary import INVERT_MODES, KINDS as ADVERSARY_KINDS
from .data import SCHEMES
from .errors import ParseError, ValidationError

DATA_DIR_ENV = "FEDARENA_DATA_DIR"

AGGREGATORS = ("rffl", "fedavg", "qffl", "multikrum", "foolsgold", "signsgd", "median", "standalone")

AGGREGATOR_DEFAULTS = {
    "rffl": {"alpha": 0.8, "threshold_fraction": 1.0 / 3.0, "upload_norm": "median"},
    "fedavg": {},
    "qffl": {"q": 0.1, "sample_ratio": 0.8},
    "multikrum": {"clip_ratio": 0.2},
    "foolsgold": {"confidence": 1.0},
    "signsgd": {"server_lr": 0.001, "momentum": 0.8},
    "median": {},
    "standalone": {},
}

ADVERSARY_FIELDS = {
    "honest": (),
    "label_flip": ("src_class", "dst_class"),
    "rescale": ("factor",),
    "sign_randomize": (),
    "value_invert": ("prob", "mode"),
    "free_rider": (),
}

TOP_LEVEL = ("comment", "dataset", "split", "model", "sgd", "aggregator", "adversaries",
             "rounds", "seed", "out_dir", "finetune_epochs", "trace_eval_size")


@dataclass
class ExperimentConfig:
    dataset: dict
    split: dict
    aggregator: dict
    model: dict = field(default_factory=lambda: {"hidden_dim": 64})
    sgd: dict = field(default_factory=dict)
    adversaries: list = field(default_factory=list)
    rounds: int = 60
    seed: int = 0
    out_dir: str = None
    finetune_epochs: int = 1
    trace_eval_size: int = 2000
    comment: str = ""

    @property
    def honest_count(self):
        return self.split["participants"]

    @property
    def adversary_total(self):
        return sum(a["count"] for a in self.adversaries)

    def to_dict(self):
        return copy.deepcopy(asdict(self))

    def replace(self, **changes):
        d = self.to_dict()
        d.update(changes)
        return from_dict(d)


def _ensure_mapping(value, where):
    if not isinstance(value, dict):
        raise ValidationError(where, f"expected a mapping, got {type(value).__name__}")
    return value


def _reject_unknown(d, allowed, where):
    for key in d:
        if key not in allowed:
            raise ValidationError(_path(where, key), f"unknown key {key!r}")


def _path(where, key):
    return f"{where}.{key}" if where else key


def _int(d, key, where, minimum=None):
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, int):
        raise ValidationError(_path(where, key), f"expected an integer, got {v!r}")
    if minimum is not None and v < minimum:
        raise ValidationError(_path(where, key), f"must be >= {minimum}, got {v}")
    return v


def _float(d, key, where):
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ValidationError(_path(where, key), f"expected a number, got {v!r}")
    return float(v)


def _dataset(raw, check_paths):
    d = dict(_ensure_mapping(raw, "dataset"))
    kind = d.get("kind")
    if kind == "mnist":
        _reject_unknown(d, ("kind", "dir"), "dataset")
        if d.get("dir") is None:
            d["dir"] = os.environ.get(DATA_DIR_ENV)
        if d["dir"] is None:
            raise ValidationError("dataset.dir", f"not given and ${DATA_DIR_ENV} is unset")
        d["dir"] = str(d["dir"])
        if check_paths and not os.path.isdir(d["dir"]):
            raise ValidationError("dataset.dir", f"no such directory {d['dir']!r}")
    elif kind == "synth":
        _reject_unknown(d, ("kind", "classes", "dim", "n", "seed"), "dataset")
        d.setdefault("classes", 10)
        d.setdefault("dim", 20)
        d.setdefault("n", 5000)
        d.setdefault("seed", 0)
        _int(d, "classes", "dataset", 2)
        _int(d, "dim", "dataset", 1)
        _int(d, "n", "dataset", 2)
        _int(d, "seed", "dataset")
    else:
        raise ValidationError("dataset.kind", f"expected 'mnist' or 'synth', got {kind!r}")
    return d


def _split(raw):
    d = dict(_ensure_mapping(raw, "split"))
    _reject_unknown(d, ("scheme", "participants", "total_examples"), "split")
    if d.get("scheme") not in SCHEMES:
        raise ValidationError("split.scheme", f"expected one of {SCHEMES}, got {d.get('scheme')!r}")
    if "participants" not in d:
        raise ValidationError("split.participants", "required")
    _int(d, "participants", "split", 2)
    d.setdefault("total_examples", 600 * d["participants"])
    _int(d, "total_examples", "split", d["participants"])
    return d


def _sgd(raw, participants):
    d = dict(_ensure_mapping(raw or {}, "sgd"))
    _reject_unknown(d, ("learning_rate", "lr_decay", "batch_size", "local_epochs"), "sgd")
    d.setdefault("learning_rate", 0.15 if participants <= 5 else 0.25)
    d.setdefault("lr_decay", 0.977)
    d.setdefault("batch_size", 16)
    d.setdefault("local_epochs", 1)
    if not _float(d, "learning_rate", "sgd") > 0:
        raise ValidationError("sgd.learning_rate", "must be > 0")
    if not 0 < _float(d, "lr_decay", "sgd") <= 1:
        raise ValidationError("sgd.lr_decay", "must be in (0, 1]")
    d["learning_rate"] = float(d["learning_rate"])
    d["lr_decay"] = float(d["lr_decay"])
    _int(d, "batch_size", "sgd", 1)
    _int(d, "local_epochs", "sgd", 1)
    return d


def _model(raw):
    d = dict(_ensure_mapping(raw or {}, "model"))
    _reject_unknown(d, ("hidden_dim",), "model")
    d.setdefault("hidden_dim", 64)
    _int(d, "hidden_dim", "model", 0)
    return d


def _aggregator(raw):
    if isinstance(raw, str):
        raw = {"name": raw}
    d = dict(_ensure_mapping(raw, "aggregator"))
    name = d.get("name")
    if name not in AGGREGATORS:
        raise ValidationError("aggregator.name", f"expected one of {AGGREGATORS}, got {name!r}")
    defaults = AGGREGATOR_DEFAULTS[name]
    _reject_unknown(d, ("name",) + tuple(defaults), "aggregator")
    for k, v in defaults.items():
        d.setdefault(k, v)
        if k == "upload_norm" and (d[k] is None or d[k] == "median"):
            continue
        d[k] = _float(d, k, "aggregator")
    if name == "rffl":
        if not 0 <= d["alpha"] <= 1:
            raise ValidationError("aggregator.alpha", "must be in [0, 1]")
        if not 0 <= d["threshold_fraction"] < 1:
            raise ValidationError("aggregator.threshold_fraction", "must be in [0, 1)")
        if d["upload_norm"] not in (None, "median") and d["upload_norm"] <= 0:
            raise ValidationError("aggregator.upload_norm", "must be > 0, 'median' or null")
    if name == "qffl":
        if d["q"] < 0:
            raise ValidationError("aggregator.q", "must be >= 0")
        if not 0 < d["sample_ratio"] <= 1:
            raise ValidationError("aggregator.sample_ratio", "must be in (0, 1]")
    if name == "multikrum" and not 0 <= d["clip_ratio"] < 0.5:
        raise ValidationError("aggregator.clip_ratio", "must be in [0, 0.5)")
    if name == "signsgd":
        if d["server_lr"] <= 0:
            raise ValidationError("aggregator.server_lr", "must be > 0")
        if not 0 <= d["momentum"] < 1:
            raise ValidationError("aggregator.momentum", "must be in [0, 1)")
    return d


def _adversaries(raw, honest):
    if raw is None:
        return []
    if not isinstance(raw, list):
        raise ValidationError("adversaries", "expected a list")
    out = []
    for n, item in enumerate(raw):
        where = f"adversaries[{n}]"
        d = dict(_ensure_mapping(item, where))
        kind = d.get("kind")
        if kind not in ADVERSARY_KINDS:
            raise ValidationError(f"{where}.kind", f"expected one of {ADVERSARY_KINDS}, got {kind!r}")
        _reject_unknown(d, ("kind", "count", "fraction") + ADVERSARY_FIELDS[kind], where)
        if ("count" in d) == ("fraction" in d):
            raise ValidationError(f"{where}.count", "give exactly one of count or fraction")
        if "fraction" in d:
            from .adversary import adversary_count
            frac = _float(d, "fraction", where)
            if frac < 0:
                raise ValidationError(f"{where}.fraction", "must be >= 0")
            d["count"] = adversary_count(honest, frac)
            del d["fraction"]
        _int(d, "count", where, 0)
        if kind == "label_flip":
            d.setdefault("src_class", 1)
            d.setdefault("dst_class", 7)
            _int(d, "src_class", where, 0)
            _int(d, "dst_class", where, 0)
            if d["src_class"] == d["dst_class"]:
                raise ValidationError(f"{where}.dst_class", "must differ from src_class")
        if kind == "rescale":
            d.setdefault("factor", -100.0)
            d["factor"] = _float(d, "factor", where)
            if d["factor"] == 0:
                raise ValidationError(f"{where}.factor", "must be nonzero")
        if kind == "value_invert":
            d.setdefault("prob", 0.5)
            d["prob"] = _float(d, "prob", where)
            if not 0 < d["prob"] <= 1:
                raise ValidationError(f"{where}.prob", "must be in (0, 1]")
            d.setdefault("mode", "reciprocal")
            if d["mode"] not in INVERT_MODES:
                raise ValidationError(f"{where}.mode", f"expected one of {INVERT_MODES}, got {d['mode']!r}")
        out.append(d)
    return out


def from_dict(raw, check_paths=True):
    """Validate a raw mapping and return a fully-defaulted ExperimentConfig."""
    raw = _ensure_mapping(raw, "config")
    _reject_unknown(raw, TOP_LEVEL, "")
    for key in ("dataset", "split", "aggregator"):
        if key not in raw:
            raise ValidationError(key, "required")
    d = dict(raw)
    d["dataset"] = _dataset(raw["dataset"], check_paths)
    d["split"] = _split(raw["split"])
    d["sgd"] = _sgd(raw.get("sgd"), d["split"]["participants"])
    d["model"] = _model(raw.get("model"))
    d["aggregator"] = _aggregator(raw["aggregator"])
    d["adversaries"] = _adversaries(raw.get("adversaries"), d["split"]["participants"])
    d.setdefault("rounds", 60)
    d.setdefault("seed", 0)
    d.setdefault("finetune_epochs", 1)
    d.setdefault("trace_eval_size", 2000)
    d.setdefault("comment", "")
    d.setdefault("out_dir", None)
    _int(d, "rounds", "", 0)
    _int(d, "seed", "")
    _int(d, "finetune_epochs", "", 0)
    _int(d, "trace_eval_size", "", 0)
    if not isinstance(d["comment"], str):
        raise ValidationError("comment", "expected a string")
    if d["out_dir"] is not None:
        d["out_dir"] = str(d["out_dir"])
    return ExperimentConfig(**d)


def loads(text, check_paths=True):
    try:
        raw = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        line = exc.problem_mark.line + 1 if exc.problem_mark is not None else None
        raise ParseError(str(exc.problem or exc), line) from exc
    except yaml.YAMLError as exc:
        raise ParseError(str(exc)) from exc
    if raw is None:
        raise ParseError("empty config", 1)
    return from_dict(raw, check_paths=check_paths)


def parse_config(path, check_paths=True):
    with open(path, encoding="utf-8") as f:
        text = f.read()
    return loads(text, check_paths=check_paths)


def dumps(cfg):
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False, default_flow_style=False)
