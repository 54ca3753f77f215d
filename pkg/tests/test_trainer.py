import dataclasses
import math

import numpy as np
import pytest

from partialda import trainer
from partialda.data import PdaDataset, SealedLabels, generate_synthetic_pda, standardize
from partialda.networks import MlpSpec, init_model
from partialda.trainer import (TrainConfig, TrainingDiverged, build_step_graph, confusion_matrix,
                               default_beta, evaluate, predict, source_only_config, train,
                               weight_alignment)


@pytest.fixture(scope="module")
def small():
    return generate_synthetic_pda(n_classes=6, shared=3, dim=8, n_per_class=30, seed=3)


def quick(**kw):
    base = dict(n_iters=20, interval=2, batch_size=12, feature_widths=(8, 6), disc_hidden=6)
    base.update(kw)
    return TrainConfig(**base)


def trajectory(result):
    return [(e["L_ent"], e["loss"], e["m"]) for e in result.record.intervals]


def test_default_beta():
    assert default_beta(10) == 5.0 and default_beta(31) == 5.0 and default_beta(65) == 1.0


def test_config_validation():
    with pytest.raises(ValueError, match="divisible"):
        TrainConfig(n_iters=100, interval=30).validate()
    with pytest.raises(ValueError, match="mode"):
        TrainConfig(mode="dann").validate()
    assert TrainConfig().resolved(10).beta == 5.0
    assert TrainConfig(beta=3.0).resolved(2).beta == 0.0


def test_edann_equals_full_without_wce_and_augmentation(small):
    a = train(small, quick(mode="edann", seed=4))
    b = train(small, quick(mode="full", beta=0.0, rho0=0.0, seed=4))
    assert len(a.record.intervals) == 10
    assert trajectory(a) == trajectory(b)
    for k in a.final.params:
        assert np.array_equal(a.final.params[k], b.final.params[k])


def test_rerun_is_bit_identical(small):
    a, b = train(small, quick(seed=9)), train(small, quick(seed=9))
    assert trajectory(a) == trajectory(b)


def test_single_interval_updates_weights_once(small):
    res = train(small, quick(n_iters=6, interval=6))
    assert len(res.weights) == 1 and res.weights[0].updated_at == 6
    assert len(res.record.intervals) == 1 and res.record.best_interval == 0


def test_selected_checkpoint_minimises_target_entropy(small):
    res = train(small, quick(seed=1))
    ents = [e["L_ent"] for e in res.record.intervals]
    k = int(np.argmin(ents))
    assert res.record.best_interval == k
    for name in res.selected.params:
        assert np.array_equal(res.selected.params[name], res.checkpoints[k].params[name])
    # recompute the entropy of the selected model directly
    preds = trainer.classify(res.selected, standardize(small).target_x)
    ent = float(np.mean(-np.sum(preds * np.log(np.clip(preds, 1e-12, 1)), axis=1)))
    assert ent == pytest.approx(min(ents), rel=1e-12)


def test_augmentation_staircase_logged(small):
    res = train(small, TrainConfig(n_iters=20, interval=2, batch_size=36, feature_widths=(8, 6),
                                   disc_hidden=6, mode="baa"))
    assert [e["n_aug"] for e in res.record.intervals] == [9, 8, 7, 6, 5, 4, 3, 2, 1, 0]


def test_literal_rho_holds_constant(small):
    res = train(small, quick(n_iters=20, interval=2, batch_size=36, mode="baa", literal_rho=True))
    rhos = [e["rho"] for e in res.record.intervals]
    assert rhos[0] == 0.25 and all(r == pytest.approx(0.25 * 0.9) for r in rhos[1:])


def test_lambda_zero_leaves_features_without_adversarial_gradient():
    rng = np.random.default_rng(0)
    model = init_model(MlpSpec((4, 5), "tanh"), MlpSpec((5, 3), "tanh", "softmax"),
                       MlpSpec((5, 4, 1), "tanh", "sigmoid"), 0)
    xs, xt = rng.standard_normal((6, 4)), rng.standard_normal((6, 4))
    ys = rng.integers(0, 3, 6)
    common = dict(alpha=0.0, beta=0.0, xi=1.0, mode="edann", rho=0.0)
    g_adv, _ = build_step_graph(model, xs, ys, xt, xs[:0], ys[:0], np.ones(3), lam=0.0, **common)
    with_adv = g_adv.backward()
    # the same step with the adversarial branch removed entirely
    g_cls, t = build_step_graph(model, xs, ys, xt, xs[:0], ys[:0], np.ones(3), lam=0.0, **common)
    cls_only = g_cls.backward(t["cls"])
    for k in with_adv:
        if k.startswith("f."):
            np.testing.assert_array_equal(with_adv[k], cls_only[k])
    assert any(np.abs(with_adv[k]).max() > 0 for k in with_adv if k.startswith("d."))


def test_source_only_never_moves_discriminator_into_features(small):
    cfg = source_only_config(quick())
    assert cfg.lam_scale == 0 and cfg.alpha == 0 and cfg.beta == 0 and cfg.rho0 == 0
    res = train(small, cfg)
    assert all(w == 1.0 for w in res.weights[-1].weights)


def test_divergence_aborts_with_snapshot(small):
    view = small.training_view()
    bad = view.target_x.copy()
    bad[:, 0] = np.nan
    with pytest.raises(TrainingDiverged) as err:
        train(dataclasses.replace(view, target_x=bad), quick())
    assert "iteration" in err.value.snapshot


def test_training_rejects_other_inputs():
    with pytest.raises(TypeError):
        train({"x": 1}, quick())


# -- evaluation -------------------------------------------------------------------

def _uniform_model(d=4, C=5):
    model = init_model(MlpSpec((d, 3)), MlpSpec((3, C), output="softmax"), MlpSpec((3, 1), output="sigmoid"), 0)
    for k in model.params:
        if k.startswith("g."):
            model.params[k][:] = 0.0
    return model


def _labelled(x, labels, C=5):
    src_y = np.arange(len(x)) % C
    return PdaDataset(x, src_y, x, C, (), SealedLabels(labels))


def test_tie_breaking_picks_lowest_index():
    model = _uniform_model()
    x = np.random.default_rng(0).standard_normal((50, 4))
    assert np.all(predict(model, x) == 0)
    labels = np.arange(50) % 5
    assert evaluate(model, _labelled(x, labels), standardized=False) == 0.2


def test_perfect_and_adversarial_accuracy():
    model = init_model(MlpSpec((3, 3)), MlpSpec((3, 3), output="softmax"), MlpSpec((3, 1), output="sigmoid"), 0)
    model.params["f.W0"] = np.eye(3)
    model.params["g.W0"] = 10 * np.eye(3)
    x = 5 * np.eye(3)[[0, 1, 2, 1]]
    truth = np.array([0, 1, 2, 1])
    assert evaluate(model, _labelled(x, truth, 3), standardized=False) == 1.0
    assert evaluate(model, _labelled(x, (truth + 1) % 3, 3), standardized=False) == 0.0


def test_confusion_rows_sum_to_class_counts(small):
    res = train(small, quick())
    cm = confusion_matrix(res.final, small)
    counts = np.bincount(small.eval_labels(), minlength=small.n_classes)
    assert np.array_equal(cm.sum(axis=1), counts)
    assert cm.trace() / cm.sum() == evaluate(res.final, small)


def test_evaluate_needs_labels(small):
    with pytest.raises(ValueError, match="no evaluation labels"):
        evaluate(train(small, quick(n_iters=2, interval=2)).final,
                 dataclasses.replace(small, sealed=None, shared_classes=()))


def test_weight_alignment():
    out = weight_alignment(np.array([1.0, 0.8, 0.2, 0.1]), (0, 1))
    assert out["shared_mean"] == pytest.approx(0.9) and out["outlier_mean"] == pytest.approx(0.15)
    assert out["ratio"] == pytest.approx(6.0)
    assert math.isnan(weight_alignment(np.ones(3), (0, 1, 2))["outlier_mean"])


@pytest.mark.slow
def test_closed_set_weights_stay_high():
    # standard benchmark sizes with every class shared, default config and seed
    ds = generate_synthetic_pda(n_classes=10, shared=10, seed=0)
    res = train(ds, TrainConfig())
    assert res.weights[-1].weights.min() > 0.5


@pytest.mark.slow
def test_zero_gap_rows_agree():
    ds = generate_synthetic_pda(n_classes=6, shared=3, dim=8, n_per_class=60, shift=0.0, seed=0)
    base = TrainConfig(n_iters=400, interval=100, feature_widths=(16, 16), disc_hidden=16)
    table = trainer.ablation_suite(ds, base, seeds=(0, 1))
    means = [table[r]["mean"] for r in trainer.ABLATION_ROWS]
    assert max(means) - min(means) <= 0.05


def test_sweep_beta_zero_equals_baa(small):
    base = quick()
    rows = trainer.sweep("beta", [0.0], base, seeds=[0], dataset=small, modes=("full", "baa"))
    assert rows[0]["accuracy"] == rows[1]["accuracy"]
    with pytest.raises(ValueError, match="unknown sweep axis"):
        trainer.sweep("gamma", [1], base, [0], small)
