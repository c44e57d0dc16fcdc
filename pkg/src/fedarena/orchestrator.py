"""Round loop: local training, attacks, server aggregation, downloads."""
import functools
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import aggregators as agg
from . import data as data_mod
from . import metrics
from .adversary import AdversarySpec, corrupt_delta, poison_labels
from .errors import ZeroNorm
from .model import ModelSpec, SGDConfig, evaluate, init_model, local_train

log = logging.getLogger(__name__)

GLOBAL_MODEL_AGGREGATORS = ("fedavg", "qffl", "multikrum", "foolsgold", "signsgd", "median")

# SeedSequence tags keep the random streams of different purposes apart
_TRAIN, _STANDALONE, _FINETUNE, _ADVERSARY, _SAMPLE, _TRACE, _EXTRA = range(7)


def _seed(*parts):
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


@dataclass
class Participant:
    id: int
    shard: data_mod.DataShard
    model: object
    adversary: AdversarySpec
    standalone_model: object
    removed_round: int = None
    momentum: np.ndarray = None

    @property
    def honest(self):
        return self.adversary.is_honest

    @property
    def active(self):
        return self.removed_round is None


@dataclass
class RoundRecord:
    round: int
    lr: float
    participants: list
    reputations: dict = field(default_factory=dict)
    removed: list = field(default_factory=list)
    removed_reputations: dict = field(default_factory=dict)
    per_participant_accuracy: dict = field(default_factory=dict)
    divergence: dict = field(default_factory=dict)
    aggregate_norm: float = 0.0

    def to_dict(self):
        return {
            "round": self.round,
            "lr": self.lr,
            "participants": list(self.participants),
            "reputations": {str(k): v for k, v in self.reputations.items()},
            "removed": list(self.removed),
            "removed_reputations": {str(k): v for k, v in self.removed_reputations.items()},
            "per_participant_accuracy": {str(k): v for k, v in self.per_participant_accuracy.items()},
            "divergence": {str(k): v for k, v in self.divergence.items()},
            "aggregate_norm": self.aggregate_norm,
        }

    @classmethod
    def from_dict(cls, d):
        def ids(m):
            return {int(k): v for k, v in m.items()}
        return cls(round=d["round"], lr=d["lr"], participants=list(d["participants"]),
                   reputations=ids(d["reputations"]), removed=list(d["removed"]),
                   removed_reputations=ids(d["removed_reputations"]),
                   per_participant_accuracy=ids(d["per_participant_accuracy"]),
                   divergence=ids(d["divergence"]), aggregate_norm=d["aggregate_norm"])


@functools.lru_cache(maxsize=4)
def _load_mnist_cached(directory):
    return data_mod.load_mnist(directory)


def load_dataset(cfg):
    """(train, test, num_classes) for the config's dataset section."""
    ds = cfg.dataset
    if ds["kind"] == "mnist":
        train, test = _load_mnist_cached(ds["dir"])
        return train, test, 10
    train, test = data_mod.synth_classification(ds["classes"], ds["dim"], ds["n"], ds["seed"])
    return train, test, ds["classes"]


def sgd_config(cfg):
    return SGDConfig(**cfg.sgd)


def build_participants(cfg, train, num_classes):
    """Honest shards from the split plan, then adversaries on fresh uniform shards."""
    n = cfg.honest_count
    plan = data_mod.SplitPlan(cfg.split["scheme"], n, cfg.split["total_examples"], cfg.seed)
    shards = data_mod.split(train, plan, min_size=cfg.sgd["batch_size"], num_classes=num_classes)
    specs = [AdversarySpec()] * n
    for a in cfg.adversaries:
        params = {k: v for k, v in a.items() if k not in ("count",)}
        for _ in range(a["count"]):
            specs.append(AdversarySpec(**params, seed=_seed(cfg.seed, _ADVERSARY, len(specs))))
    extra = len(specs) - n
    if extra:
        pool = data_mod.remaining_indices(train, shards)
        per = cfg.split["total_examples"] // n
        if extra * per > pool.size:
            raise data_mod.InsufficientData(f"{extra} adversaries need {extra * per} unused examples")
        rng = np.random.default_rng(_seed(cfg.seed, _EXTRA))
        pool = rng.permutation(pool)
        shards += [train.subset(np.sort(pool[k * per:(k + 1) * per])) for k in range(extra)]
    spec = ModelSpec(train.features.shape[1], cfg.model["hidden_dim"], num_classes)
    w0 = init_model(spec, cfg.seed)
    participants = []
    for i, (shard, adv) in enumerate(zip(shards, specs)):
        if adv.kind == "label_flip":
            shard = poison_labels(shard, adv.src_class, adv.dst_class)
        participants.append(Participant(id=i, shard=shard, model=w0, adversary=adv,
                                        standalone_model=w0))
    return participants, w0


def run_standalone(participants, cfg, test=None):
    """Train each honest participant alone for rounds * local_epochs epochs.

    Only ``standalone_model`` is touched. Returns id -> EvalReport when a
    test shard is given, otherwise an empty dict.
    """
    sgd = sgd_config(cfg)
    for p in participants:
        if not p.honest:
            continue
        m = p.standalone_model
        for t in range(1, cfg.rounds + 1):
            m = m + local_train(m, p.shard, sgd, sgd.round_lr(t), _seed(cfg.seed, _STANDALONE, p.id, t))
        p.standalone_model = m
    if test is None:
        return {}
    return {p.id: evaluate(p.standalone_model, test) for p in participants if p.honest}


class Federation:
    """Owns participants, the server model and aggregator state for one run."""

    def __init__(self, cfg, participants, w0, trace_test=None):
        self.cfg = cfg
        self.sgd = sgd_config(cfg)
        self.participants = {p.id: p for p in participants}
        self.server = w0
        self.rule = cfg.aggregator["name"]
        self.trace_test = trace_test
        self.gradient_steps = {p.id: 0 for p in participants}
        if self.rule == "rffl":
            self.state = agg.ReputationState.initial(
                self.participants, alpha=cfg.aggregator["alpha"],
                threshold_fraction=cfg.aggregator["threshold_fraction"])
        else:
            self.state = None
        self.history = {}

    # ------------------------------------------------------------- uploads

    def _active_ids(self):
        return sorted(i for i, p in self.participants.items() if p.active)

    def _train(self, p, t, lr):
        """Local delta of participant p, plus the (possibly corrupted) upload."""
        if p.adversary.kind == "free_rider":
            own = np.zeros_like(p.model.params)
        else:
            own = local_train(p.model, p.shard, self.sgd, lr, _seed(self.cfg.seed, _TRAIN, p.id, t))
            self.gradient_steps[p.id] += self.sgd.local_epochs * math.ceil(len(p.shard) / self.sgd.batch_size)
        return own, corrupt_delta(own, p.adversary, t)

    # -------------------------------------------------------------- rounds

    def run_round(self, t):
        lr = self.sgd.round_lr(t)
        if self.rule == "rffl":
            record = self._rffl_round(t, lr)
        else:
            record = self._global_round(t, lr)
        self._trace(record)
        return record

    def _rffl_round(self, t, lr):
        ids = self._active_ids()
        own, uploads = {}, {}
        for i in ids:
            own[i], uploads[i] = self._train(self.participants[i], t, lr)
        for i in ids:
            if not np.all(np.isfinite(uploads[i])):
                log.warning("round %d: participant %d uploaded non-finite values, treated as zero", t, i)
                uploads[i] = np.zeros_like(uploads[i])
        uploads = self._normalize_uploads(uploads, t)
        prev = self.state
        aggregate = agg.rffl_aggregate(uploads, prev)
        record = RoundRecord(round=t, lr=lr, participants=ids,
                             aggregate_norm=float(np.linalg.norm(aggregate)))
        try:
            new, removed = agg.rffl_update_reputation(prev, uploads, aggregate)
        except ZeroNorm:
            log.warning("round %d: zero aggregate, reputations unchanged", t)
            new, removed = prev, set()
        if removed:
            # weights the removed participants held just before pruning
            sims = agg.similarities(uploads, aggregate)
            pre = {i: max(0.0, prev.alpha * prev.raw[i] + (1 - prev.alpha) * sims[i]) for i in ids}
            total = sum(pre.values())
            record.removed_reputations = {i: pre[i] / total for i in sorted(removed)}
        alloc = agg.rffl_allocate(aggregate, uploads, prev, new)
        for i in sorted(removed):
            self.participants[i].removed_round = t
        for i in sorted(new.active):
            p = self.participants[i]
            p.model = p.model + (own[i] + alloc.allocated[i])
        self.server = self.server + aggregate
        self.state = new
        record.reputations = dict(sorted(new.weights.items()))
        record.removed = sorted(removed)
        return record

    def _normalize_uploads(self, uploads, t):
        """Rescale every upload to one common norm before aggregation.

        ``upload_norm: median`` uses the reputation-weighted median of this
        round's upload norms; a number fixes the norm (decayed with the lr
        schedule); null leaves uploads untouched.
        """
        target = self.cfg.aggregator.get("upload_norm")
        if target is None:
            return uploads
        norms = {i: float(np.linalg.norm(u)) for i, u in uploads.items()}
        if target == "median":
            target = weighted_median([norms[i] for i in sorted(norms)],
                                     [self.state.weights[i] for i in sorted(norms)])
        else:
            target = target * self.sgd.lr_decay ** (t - 1)
        return {i: u * (target / norms[i]) if norms[i] > 0 else u for i, u in uploads.items()}

    def _global_round(self, t, lr):
        ids = self._active_ids()
        a = self.cfg.aggregator
        if self.rule == "qffl":
            k = math.ceil(a["sample_ratio"] * len(ids))
            rng = np.random.default_rng(_seed(self.cfg.seed, _SAMPLE, t))
            uploaders = sorted(rng.choice(ids, size=k, replace=False).tolist())
        else:
            uploaders = ids
        uploads = {}
        losses = {}
        for i in uploaders:
            p = self.participants[i]
            if self.rule == "qffl":
                losses[i] = evaluate(self.server, p.shard).loss
            if self.rule == "signsgd":
                own = (local_train(p.model, p.shard, self.sgd, lr, _seed(self.cfg.seed, _TRAIN, p.id, t))
                       if p.adversary.kind != "free_rider" else np.zeros_like(p.model.params))
                if p.adversary.kind != "free_rider":
                    self.gradient_steps[i] += self.sgd.local_epochs * math.ceil(len(p.shard) / self.sgd.batch_size)
                beta = a["momentum"]
                p.momentum = own if p.momentum is None else beta * p.momentum + (1 - beta) * own
                uploads[i] = corrupt_delta(p.momentum, p.adversary, t)
            else:
                _, uploads[i] = self._train(p, t, lr)
        if self.rule == "fedavg":
            step = agg.fedavg(uploads, {i: len(self.participants[i].shard) for i in uploaders})
        elif self.rule == "qffl":
            step = agg.qffl(uploads, losses, q=a["q"], lipschitz=1.0 / lr)
        elif self.rule == "multikrum":
            f, m = agg.multikrum_params(len(uploaders), a["clip_ratio"])
            step = agg.multikrum([uploads[i] for i in uploaders], f, m)
        elif self.rule == "foolsgold":
            for i in uploaders:
                self.history[i] = self.history.get(i, 0.0) + uploads[i]
            step = agg.foolsgold({i: self.history[i] for i in uploaders}, uploads, a["confidence"])
        elif self.rule == "signsgd":
            step = agg.signsgd([uploads[i] for i in uploaders], a["server_lr"] * self.sgd.lr_decay ** (t - 1))
        elif self.rule == "median":
            step = agg.median_agg([uploads[i] for i in uploaders])
        else:
            raise ValueError(f"unknown aggregator {self.rule!r}")
        self.server = self.server + step
        for i in ids:
            self.participants[i].model = self.server
        return RoundRecord(round=t, lr=lr, participants=ids, aggregate_norm=float(np.linalg.norm(step)))

    def _trace(self, record):
        for i in record.participants:
            p = self.participants[i]
            record.divergence[i] = float(np.linalg.norm(p.model.params - self.server.params))
            if self.trace_test is not None:
                record.per_participant_accuracy[i] = evaluate(p.model, self.trace_test).accuracy

    def finetune(self, t):
        """One extra local pass per honest participant so global-model runs get distinct models."""
        for i in self._active_ids():
            p = self.participants[i]
            if not p.honest:
                continue
            sgd = SGDConfig(self.sgd.learning_rate, self.sgd.lr_decay, self.sgd.batch_size,
                            self.cfg.finetune_epochs)
            p.model = p.model + local_train(p.model, p.shard, sgd, sgd.round_lr(t),
                                            _seed(self.cfg.seed, _FINETUNE, p.id))


def weighted_median(values, weights):
    """Lower weighted median: smallest value whose cumulative weight reaches half."""
    order = np.argsort(values, kind="stable")
    v = np.asarray(values, dtype=np.float64)[order]
    w = np.asarray(weights, dtype=np.float64)[order]
    cum = np.cumsum(w)
    return float(v[np.searchsorted(cum, 0.5 * cum[-1])])


def trace_subset(test, size, seed):
    if size == 0 or size >= len(test):
        return test
    rng = np.random.default_rng(_seed(seed, _TRACE))
    return test.subset(np.sort(rng.choice(len(test), size=size, replace=False)))


def run_experiment(cfg):
    """Build the scenario from cfg, run every round and return an ExperimentReport."""
    train, test, num_classes = load_dataset(cfg)
    participants, w0 = build_participants(cfg, train, num_classes)
    log.info("%d participants (%d honest), D=%d, aggregator=%s", len(participants),
             cfg.honest_count, w0.params.size, cfg.aggregator["name"])
    standalone = run_standalone(participants, cfg, test)
    rounds = []
    fed = None
    if cfg.aggregator["name"] != "standalone":
        fed = Federation(cfg, participants, w0, trace_subset(test, cfg.trace_eval_size, cfg.seed))
        # a poisoned global model may overflow to inf/nan; that is a result, not a bug
        with np.errstate(over="ignore", invalid="ignore"):
            for t in range(1, cfg.rounds + 1):
                rec = fed.run_round(t)
                rounds.append(rec)
                log.debug("round %d: active=%d removed=%s", t, len(rec.participants), rec.removed)
            if cfg.aggregator["name"] in GLOBAL_MODEL_AGGREGATORS and cfg.finetune_epochs and cfg.rounds:
                fed.finetune(cfg.rounds + 1)
            final = {p.id: evaluate(p.model, test) for p in participants}
    else:
        for p in participants:
            p.model = p.standalone_model
        final = {i: r for i, r in standalone.items()}
    return metrics.build_report(cfg, participants, standalone, final, rounds, test,
                                gradient_steps=fed.gradient_steps if fed else {})
