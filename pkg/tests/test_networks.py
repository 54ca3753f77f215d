import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from partialda.networks import (MlpSpec, classify, default_specs, discriminate, init_model,
                                load_checkpoint, save_checkpoint, sgd_step, xavier_bound)


def small_model(seed=0, d=4, C=3):
    return init_model(MlpSpec((d, 6, 5)), MlpSpec((5, C), output="softmax"),
                      MlpSpec((5, 4, 1), output="sigmoid"), seed)


def zeroed(model, head):
    m = model.copy()
    for k in m.params:
        if k.startswith(head + "."):
            m.params[k][:] = 0.0
    return m


def test_xavier_bound_fan_three():
    assert xavier_bound(3, 3) == 1.0


def test_weights_within_xavier_bound():
    model = small_model()
    for k, v in model.params.items():
        if ".W" in k:
            assert np.all(np.abs(v) <= xavier_bound(*v.shape))


def test_biases_start_at_zero():
    model = small_model()
    for k, v in model.params.items():
        if ".b" in k:
            assert v.shape[0] == 1 and np.all(v == 0)


def test_same_seed_same_parameters():
    a, b = small_model(7), small_model(7)
    assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)
    c = small_model(8)
    assert not np.array_equal(a.params["f.W0"], c.params["f.W0"])


def test_incompatible_widths():
    with pytest.raises(ValueError, match="G input width"):
        init_model(MlpSpec((4, 6)), MlpSpec((5, 3), output="softmax"), MlpSpec((6, 1)), 0)
    with pytest.raises(ValueError, match="single unit"):
        init_model(MlpSpec((4, 6)), MlpSpec((6, 3), output="softmax"), MlpSpec((6, 2)), 0)


def test_default_specs_shapes():
    f, g, d = default_specs(16, 10)
    assert f.widths == (16, 64, 32) and g.widths == (32, 10) and d.widths == (32, 32, 1)
    init_model(f, g, d, 0)


def test_zero_classifier_is_uniform():
    model = zeroed(small_model(), "g")
    x = np.random.default_rng(0).standard_normal((7, 4))
    p = classify(model, x)
    assert p.shape == (7, 3)
    np.testing.assert_allclose(p, 1 / 3, rtol=0, atol=1e-15)


def test_zero_discriminator_is_half():
    model = zeroed(small_model(), "d")
    out = discriminate(model, np.random.default_rng(0).standard_normal((5, 4)))
    assert out.shape == (5, 1)
    assert np.all(out == 0.5)


def test_discriminator_output_clamped_open_interval():
    model = small_model()
    model.params["d.b1"][:] = 1e4
    assert np.all(discriminate(model, np.zeros((2, 4))) < 1.0)
    model.params["d.b1"][:] = -1e4
    assert np.all(discriminate(model, np.zeros((2, 4))) > 0.0)


def test_width_mismatch():
    with pytest.raises(ValueError, match="columns"):
        classify(small_model(), np.zeros((2, 5)))
    with pytest.raises(ValueError, match="columns"):
        discriminate(small_model(), np.zeros((2, 3)))


def test_classify_is_pure_and_deterministic():
    model = small_model()
    before = {k: v.copy() for k, v in model.params.items()}
    x = np.random.default_rng(1).standard_normal((3, 4))
    assert np.array_equal(classify(model, x), classify(model, x))
    assert all(np.array_equal(before[k], model.params[k]) for k in before)


def test_zero_gradient_step():
    model = small_model()
    new = sgd_step(model, {k: np.zeros_like(v) for k, v in model.params.items()}, lr=0.1)
    assert new.step == model.step + 1
    assert all(np.array_equal(new.params[k], model.params[k]) for k in model.params)


def test_sgd_feature_and_head_rates():
    model = small_model()
    grads = {k: np.ones_like(v) for k, v in model.params.items()}
    new = sgd_step(model, grads, lr=0.01, momentum=0.0)
    np.testing.assert_array_equal(new.params["f.W0"], model.params["f.W0"] - 0.01)
    np.testing.assert_array_equal(new.params["g.W0"], model.params["g.W0"] - 0.1)
    np.testing.assert_array_equal(new.params["d.W1"], model.params["d.W1"] - 0.1)


def test_momentum_accumulates():
    model = small_model()
    grads = {k: np.ones_like(v) for k, v in model.params.items()}
    one = sgd_step(model, grads, lr=0.01, momentum=0.9, classifier_lr_multiplier=1.0)
    two = sgd_step(one, grads, lr=0.01, momentum=0.9, classifier_lr_multiplier=1.0)
    np.testing.assert_allclose(two.params["f.W0"], model.params["f.W0"] - 0.01 - 0.019, rtol=0, atol=1e-15)


def test_missing_gradient():
    model = small_model()
    grads = {k: np.zeros_like(v) for k, v in model.params.items()}
    del grads["d.b0"]
    with pytest.raises(KeyError, match="d.b0"):
        sgd_step(model, grads, lr=0.1)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**16), st.floats(1e-4, 1.0), st.integers(1, 4))
def test_plain_sgd_and_parameter_count(seed, lr, steps):
    model = small_model(seed)
    rng = np.random.default_rng(seed)
    n0 = model.n_parameters()
    for _ in range(steps):
        grads = {k: rng.standard_normal(v.shape) for k, v in model.params.items()}
        new = sgd_step(model, grads, lr=lr, momentum=0.0, classifier_lr_multiplier=1.0)
        for k in model.params:
            assert np.array_equal(new.params[k], model.params[k] - lr * grads[k])
        model = new
        assert model.n_parameters() == n0


def test_checkpoint_round_trip(tmp_path):
    model = small_model(3)
    grads = {k: np.full_like(v, 0.5) for k, v in model.params.items()}
    model = sgd_step(model, grads, lr=0.01)
    save_checkpoint(model, tmp_path / "ck.json", extra={"interval": 2})
    back = load_checkpoint(tmp_path / "ck.json")
    assert back.step == model.step and back.specs == model.specs
    for k in model.params:
        assert np.array_equal(back.params[k], model.params[k])
        assert np.array_equal(back.momentum[k], model.momentum[k])
