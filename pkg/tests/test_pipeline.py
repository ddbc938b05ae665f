import numpy as np
import pytest

from fairwin import data, fisher, lowrank, model, pipeline
from fairwin.errors import ConfigError, GroupEmptyError
from fairwin.fisher import FisherDiagonal
from fairwin.metrics import FairnessReport, evaluate, predict
from fairwin.pipeline import PretrainConfig, RunConfig, SyntheticTask

SMALL = SyntheticTask(n=1500, d=10)
FAST_PRE = PretrainConfig(hidden=(16, 8), epochs=8)


@pytest.fixture(scope="module")
def task():
    return SMALL.build(0)


@pytest.fixture(scope="module")
def pretrained(task):
    return pipeline.pretrain(task.pretrain, FAST_PRE, seed=0)


def cfg(method, **kw):
    kw.setdefault("epochs", 4)
    return RunConfig(method=method, **kw)


def same_params(a, b):
    return all(x.weight.tobytes() == y.weight.tobytes() and x.bias.tobytes() == y.bias.tobytes()
               for x, y in zip(a.layers, b.layers))


def report(**kw):
    base = dict(err_percent=10.0, f1_weighted=0.9, delta_dp=0.1, delta_tpr=0.0, delta_fpr=0.0, delta_eo=0.0)
    base.update(kw)
    return FairnessReport(**base)


# configs

@pytest.mark.parametrize("kw", [
    dict(method="LORA"), dict(alpha=1.0), dict(alpha=0.4), dict(regularizer_intensity=1.5),
    dict(pretrain_fairness="XX"), dict(rank=0), dict(energy=0.0), dict(lr=0.0),
])
def test_run_config_validation(kw):
    with pytest.raises(ConfigError):
        RunConfig(**kw)


def test_constraint_metric():
    assert RunConfig(method="RETRAIN_EO").constraint == "EO"
    assert RunConfig(method="TL", pretrain_fairness="EO", pretrain_intensity=0.5).constraint == "EO"
    assert RunConfig(method="OURS").constraint == "DP"


# pretraining

def test_zero_intensity_pretrain_is_plain(task):
    plain = pipeline.pretrain(task.pretrain, FAST_PRE, seed=1)
    zero = pipeline.pretrain(task.pretrain, PretrainConfig(hidden=(16, 8), epochs=8, fairness="DP", intensity=0.0), seed=1)
    assert same_params(plain, zero)


def test_fair_pretrain_needs_both_groups(task):
    with pytest.raises(GroupEmptyError):
        pipeline.pretrain(data.group_subset(task.pretrain, 1), PretrainConfig(fairness="EO", intensity=0.5))


def test_dp_regularizer_lowers_pretrain_dp():
    gaps = []
    for seed in range(10):
        t = SyntheticTask(n=2000).build(seed)
        plain = pipeline.pretrain(t.pretrain, PretrainConfig(), seed)
        fair = pipeline.pretrain(t.pretrain, PretrainConfig(fairness="DP", intensity=0.9), seed)
        gaps.append((evaluate(plain, t.pretrain_test).delta_dp, evaluate(fair, t.pretrain_test).delta_dp))
    gaps = np.array(gaps)
    assert gaps[:, 1].mean() < gaps[:, 0].mean()


# baselines

def test_tl(task, pretrained):
    net, info = pipeline.finetune_tl(pretrained, task.train, cfg("TL"))
    d, k = pretrained.layers[-1].weight.shape
    assert net.trainable_params() == d * k + k
    for a, b in zip(pretrained.layers[:-1], net.layers[:-1]):
        assert a.weight.tobytes() == b.weight.tobytes()
    assert info["history"][-1] <= info["history"][0]
    # the input network is left alone
    assert not any(layer.frozen for layer in pretrained.layers)


def test_fsvd_counts(task, pretrained):
    net, info = pipeline.finetune_fsvd(pretrained, task.train, cfg("F_SVD", rank=1))
    d, k = pretrained.layers[-1].weight.shape
    assert net.trainable_params() == d * 1 + 1 * k + k
    assert info["rank"] == 1


def test_identity_importance_collapses_to_fsvd(pretrained):
    d = pretrained.representation_dim
    a, _ = pipeline.factorized_head(pretrained, FisherDiagonal.identity(d), cfg("OURS", rank=1))
    b, _ = pipeline.factorized_head(pretrained, None, cfg("F_SVD", rank=1))
    assert same_params(a, b)


def test_full_rank_fsvd_matches_dense_predictions(task, pretrained):
    net, _ = pipeline.factorized_head(pretrained, None, cfg("F_SVD", rank=2))
    assert np.array_equal(predict(net, task.test), predict(pretrained, task.test))
    np.testing.assert_allclose(model.forward(net, task.test.x)[0], model.forward(pretrained, task.test.x)[0], atol=1e-10)


def test_retrain_zero_intensity_is_tl(task, pretrained):
    tl, _ = pipeline.finetune_tl(pretrained, task.train, cfg("TL"))
    rt, _ = pipeline.finetune_retrain_fair(pretrained, task.train, cfg("RETRAIN_DP", regularizer_intensity=0.0))
    assert same_params(tl, rt)


def test_ours_neutral_alpha(task, pretrained):
    i1, i2 = fisher.group_importances(pretrained, task.train)
    imp = pipeline.neutralized_importance(pretrained, task.train, 0.5)
    assert imp.diag.tobytes() == fisher.neutralize(i1, i2).diag.tobytes()
    assert imp.diag.tobytes() == fisher.blend(i1, i2, 0.5).diag.tobytes()


def test_ours_uses_weighted_factors(task, pretrained):
    imp = pipeline.neutralized_importance(pretrained, task.train)
    net, _ = pipeline.factorized_head(pretrained, imp, cfg("OURS", rank=1))
    w = pretrained.layers[-1].weight
    expected = lowrank.weighted_factorize(w, pretrained.layers[-1].bias, imp, 1)
    assert net.layers[-2].weight.tobytes() == expected.a.tobytes()
    assert net.layers[-1].weight.tobytes() == expected.b_factor.tobytes()


def test_ours_needs_both_groups(task, pretrained):
    with pytest.raises(GroupEmptyError):
        pipeline.finetune_ours(pretrained, data.group_subset(task.train, 2), cfg("OURS"))


def test_width_mismatch(task):
    other = model.init_net([7, 4, 2])
    with pytest.raises(ConfigError, match="expects 7 features"):
        pipeline.finetune_tl(other, task.train, cfg("TL"))


def test_frozen_extractor_representation_shared(task, pretrained):
    reps = []
    for method in ("TL", "F_SVD", "OURS"):
        net, _ = pipeline.run_method(pretrained, task, cfg(method))
        reps.append(model.representation(net, task.test.x))
    assert reps[0].tobytes() == reps[1].tobytes() == reps[2].tobytes()


def test_ours_fewer_params_than_tl(task, pretrained):
    _, tl = pipeline.run_method(pretrained, task, cfg("TL"))
    _, ours = pipeline.run_method(pretrained, task, cfg("OURS"))
    assert ours.rank < 2
    assert ours.trainable_params < tl.trainable_params


# results

def test_bias_delta_report():
    r = report(delta_eo=0.3)
    assert pipeline.bias_delta_report(r, r, "EO") == 0.0
    assert pipeline.bias_delta_report(report(delta_eo=0.012), report(delta_eo=0.183), "EO") == pytest.approx(0.171)
    with pytest.raises(ConfigError):
        pipeline.bias_delta_report(r, r, "XX")


def test_result_delta_recomputes(task, pretrained):
    _, res = pipeline.run_method(pretrained, task, cfg("TL", pretrain_fairness="EO", pretrain_intensity=0.5))
    rec = res.record()
    assert rec["bias_metric"] == "EO"
    assert rec["bias_delta"] == rec["finetune"]["delta_eo"] - rec["pretrain"]["delta_eo"]
    assert "wall_time" not in rec


def test_run_is_reproducible(task, pretrained):
    a_net, a = pipeline.run_method(pretrained, task, cfg("OURS", seed=3))
    b_net, b = pipeline.run_method(pretrained, task, cfg("OURS", seed=3))
    assert same_params(a_net, b_net)
    assert a.record() == b.record()


def test_run_grid_parallel_matches_serial():
    configs = [cfg("TL"), cfg("OURS")]
    source = SyntheticTask(n=600, d=6).build
    pre = PretrainConfig(hidden=(8,), epochs=3)
    serial = pipeline.run_grid(source, configs, [0, 1], pre, jobs=1)
    parallel = pipeline.run_grid(source, configs, [0, 1], pre, jobs=2)
    assert [r.record() for r in serial] == [r.record() for r in parallel]
    assert [(r.config.method, r.config.seed) for r in serial] == [("TL", 0), ("TL", 1), ("OURS", 0), ("OURS", 1)]


def test_run_grid_uses_stored_networks():
    source = SyntheticTask(n=600, d=6).build
    stored = model.init_net([6, 8, 2], seed=42)
    calls = []

    def loader(seed, fairness, intensity):
        calls.append((seed, fairness, intensity))
        return stored

    results = pipeline.run_grid(source, [cfg("TL")], [5], PretrainConfig(hidden=(8,), epochs=1), load_pretrained=loader)
    assert calls == [(5, "none", 0.0)]
    assert results[0].pretrain_report == evaluate(stored, source(5).pretrain_test)


# task construction

def test_synthetic_task_shapes():
    t = SyntheticTask(n=1000, d=8).build(0)
    assert len(t.pretrain) + len(t.pretrain_test) <= 600
    assert len(t.train) + len(t.validation) + len(t.test) == 400
    for part in (t.pretrain, t.pretrain_test, t.train, t.validation, t.test):
        assert set(np.unique(part.s)) == {1, 2}


def test_task_from_dataset_restandardizes():
    ds = data.synth_biased(1000, 5, 0.5, 0)
    t = pipeline.task_from_dataset(ds, seed=0, pretrain_fraction=0.6)
    assert np.all(np.abs(t.pretrain.x.mean(axis=0)) < 1e-6)
    assert np.all(np.abs(t.pretrain.x.std(axis=0) - 1) < 1e-6)
    total = sum(len(p) for p in (t.pretrain, t.pretrain_test, t.train, t.validation, t.test))
    assert total <= 1000
