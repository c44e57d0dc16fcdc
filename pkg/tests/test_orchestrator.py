import numpy as np
import pytest

from fedarena import config, metrics, orchestrator
from fedarena.adversary import AdversarySpec
from fedarena.data import DataShard
from fedarena.model import ModelSpec, init_model
from fedarena.orchestrator import Federation, Participant

BASE = {
    "dataset": {"kind": "synth", "classes": 4, "dim": 8, "n": 3000, "seed": 1},
    "split": {"scheme": "uniform", "participants": 4, "total_examples": 800},
    "aggregator": {"name": "rffl"},
    "model": {"hidden_dim": 8},
    "sgd": {"learning_rate": 0.1},
    "rounds": 6,
    "trace_eval_size": 0,
}


def make(**changes):
    d = {**BASE, **changes}
    return config.from_dict(d)


@pytest.fixture(scope="module")
def rffl_report():
    return orchestrator.run_experiment(make())


def test_identical_shards_keep_equal_weights():
    cfg = make(sgd={"learning_rate": 0.1, "batch_size": 50})
    r = np.random.default_rng(0)
    shard = DataShard(r.standard_normal((50, 8)), r.integers(0, 4, 50))
    w0 = init_model(ModelSpec(8, 8, 4), 0)
    ps = [Participant(i, shard, w0, AdversarySpec(), w0) for i in range(4)]
    fed = Federation(cfg, ps, w0)
    rec = fed.run_round(1)
    assert rec.removed == []
    for w in rec.reputations.values():
        assert w == pytest.approx(0.25, abs=1e-9)


def test_free_rider_removed_early():
    rep = orchestrator.run_experiment(make(adversaries=[{"kind": "free_rider", "count": 1}]))
    assert 4 in rep.removed and rep.removed[4] <= 5
    assert all(i not in rep.removed for i in rep.honest_ids)


@pytest.mark.parametrize("kind", ["rescale", "sign_randomize", "value_invert"])
def test_untargeted_adversaries_removed(kind):
    rep = orchestrator.run_experiment(make(adversaries=[{"kind": kind, "count": 1}]))
    assert 4 in rep.removed
    assert all(np.isfinite(rep.per_participant[i].loss) for i in rep.honest_ids)


def test_fedavg_shares_one_model():
    cfg = make(aggregator={"name": "fedavg"}, finetune_epochs=0)
    train, test, classes = orchestrator.load_dataset(cfg)
    ps, w0 = orchestrator.build_participants(cfg, train, classes)
    fed = Federation(cfg, ps, w0)
    fed.run_round(1)
    first = ps[0].model.params
    assert all(np.array_equal(p.model.params, first) for p in ps)
    assert np.array_equal(fed.server.params, first)


@pytest.mark.parametrize("name", ["fedavg", "qffl", "multikrum", "foolsgold", "signsgd", "median"])
def test_baselines_learn(name):
    rep = orchestrator.run_experiment(make(aggregator={"name": name}))
    assert rep.max_accuracy > 0.5
    assert len(rep.rounds) == 6


def test_finetune_gives_distinct_models():
    rep = orchestrator.run_experiment(make(aggregator={"name": "fedavg"}, finetune_epochs=1))
    losses = {round(rep.per_participant[i].loss, 12) for i in rep.honest_ids}
    assert len(losses) > 1


def test_zero_rounds_reports_standalone_only():
    rep = orchestrator.run_experiment(make(rounds=0))
    assert rep.rounds == []
    assert set(rep.standalone) == set(rep.honest_ids)


def test_standalone_untouched_by_federation(rffl_report):
    alone = orchestrator.run_experiment(make(aggregator={"name": "standalone"}))
    assert alone.standalone == rffl_report.standalone
    assert alone.fairness == pytest.approx(100.0)


def test_run_is_deterministic(rffl_report):
    again = orchestrator.run_experiment(make())
    assert again.to_dict() == rffl_report.to_dict()


def test_round_trace_shapes(rffl_report):
    for rec in rffl_report.rounds:
        assert set(rec.divergence) == set(rec.participants)
        assert set(rec.per_participant_accuracy) == set(rec.participants)
        assert sum(rec.reputations.values()) == pytest.approx(1.0)


def test_one_class_participant():
    cfg = make(split={"scheme": "classimbalance", "participants": 4, "total_examples": 800}, rounds=3)
    rep = orchestrator.run_experiment(cfg)
    only = rep.standalone[0].per_class_accuracy
    assert only[0] == 1.0
    # never trained on other classes, so it rarely predicts them correctly
    assert np.mean([v for c, v in only.items() if c != 0]) < 0.1


def test_gradient_steps_counted(rffl_report):
    # 200 examples per participant, batch 16: 13 steps per round
    assert all(v == 13 * 6 for v in rffl_report.gradient_steps.values())


def test_insufficient_data_for_adversaries():
    from fedarena.errors import InsufficientData
    cfg = make(split={"scheme": "uniform", "participants": 4, "total_examples": 2400},
               adversaries=[{"kind": "free_rider", "count": 3}])
    with pytest.raises(InsufficientData):
        orchestrator.run_experiment(cfg)


def test_weighted_median():
    assert orchestrator.weighted_median([3.0, 1.0, 2.0], [1, 1, 1]) == 2.0
    assert orchestrator.weighted_median([1.0, 100.0], [0.9, 0.1]) == 1.0
    assert orchestrator.weighted_median([1.0, 100.0], [0.1, 0.9]) == 100.0


# ------------------------------------------------------------------ metrics

def test_fairness_values():
    assert metrics.fairness([0.1, 0.5, 0.9], [0.1, 0.5, 0.9]) == pytest.approx(100.0)
    assert metrics.fairness([0.1, 0.5, 0.9], [0.9, 0.4, 0.2]) == pytest.approx(-100.0, abs=5)
    assert metrics.fairness([0.5, 0.5, 0.5], [0.1, 0.2, 0.3]) is None


def test_attack_metrics():
    spec = ModelSpec(2, 0, 3)
    # bias-only model: always predicts class 2
    params = np.zeros(spec.num_params)
    params[-1] = 5.0
    always_dst = init_model(spec, 0).with_params(params)
    test = DataShard(np.zeros((6, 2)), np.array([1, 1, 1, 2, 0, 0]))
    assert metrics.attack_success_rate(always_dst, test, 1, 2) == 1.0
    assert metrics.attack_success_rate(always_dst, test, 1, 0) == 0.0
    assert metrics.target_class_accuracy(always_dst, test, 1) == 0.0
    params[-1], params[-2] = 0.0, 5.0
    perfect_for_1 = init_model(spec, 0).with_params(params)
    assert metrics.target_class_accuracy(perfect_for_1, test, 1) == 1.0
    with pytest.raises(ValueError):
        metrics.attack_success_rate(always_dst, DataShard(np.zeros((1, 2)), np.array([0])), 1, 2)


def test_label_flip_report_has_attack_metrics():
    cfg = make(adversaries=[{"kind": "label_flip", "count": 1, "src_class": 1, "dst_class": 2}])
    rep = orchestrator.run_experiment(cfg)
    assert rep.attack_success_rate is not None
    assert rep.attack_success_rate + rep.target_class_accuracy <= 1.0


def test_report_round_trip(rffl_report):
    d = rffl_report.to_dict()
    assert metrics.ExperimentReport.from_dict(d).to_dict() == d
