import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from poisonmi.data import gen_blobs
from poisonmi.defenses import DefenseConfig, DpsgdConfig
from poisonmi.encoder import encode_batch
from poisonmi.errors import ConfigError, DimensionError
from poisonmi.model import build_mlp
from poisonmi.nn import SgdConfig, per_sample_cross_entropy, softmax_cross_entropy
from poisonmi.norm import EncodingSpec, route_mask
from poisonmi.poison import (
    AttackConfig,
    _onehot,
    _per_example_backward,
    _weighted_grad,
    malicious_loss,
    mgda_coefficients,
    replace_batch,
    train,
)

SPEC = EncodingSpec()


def _grid_min(g1, g2):
    a = np.linspace(0, 1, 1001)
    comb = a[:, None] * g1 + (1 - a[:, None]) * g2
    return (comb**2).sum(axis=1).min()


def _f(alpha, g1, g2):
    v = alpha * g1 + (1 - alpha) * g2
    return float(v @ v)


def test_mgda_orthogonal_unit():
    a, b = mgda_coefficients(np.array([1.0, 0.0]), np.array([0.0, 1.0]))
    assert (a, b) == (0.5, 0.5)
    assert _f(a, np.array([1.0, 0]), np.array([0, 1.0])) == pytest.approx(0.5)


def test_mgda_scaled():
    g1, g2 = np.array([2.0, 0.0]), np.array([0.0, 1.0])
    a, b = mgda_coefficients(g1, g2)
    assert a == pytest.approx(0.2, abs=1e-15)
    assert a * g1 + b * g2 == pytest.approx([0.4, 0.8])


def test_mgda_degenerate_tie():
    g = np.array([0.3, -1.2, 2.0])
    assert mgda_coefficients(g, g.copy()) == (0.5, 0.5)


def test_mgda_grid_oracle_100_pairs():
    rng = np.random.default_rng(8)
    for _ in range(100):
        d = int(rng.integers(1, 50))
        g1, g2 = rng.normal(size=d) * rng.uniform(0.1, 5), rng.normal(size=d) * rng.uniform(0.1, 5)
        a, b = mgda_coefficients(g1, g2)
        assert 0 <= a <= 1 and b == pytest.approx(1 - a) and b >= 0
        assert _f(a, g1, g2) <= _grid_min(g1, g2) + 1e-9


@given(arrays(np.float64, 6, elements=st.floats(-1e3, 1e3)), arrays(np.float64, 6, elements=st.floats(-1e3, 1e3)))
def test_mgda_property(g1, g2):
    a, b = mgda_coefficients(g1, g2)
    assert 0 <= a <= 1 and 0 <= b <= 1 and a + b == pytest.approx(1.0)
    assert _f(a, g1, g2) <= _grid_min(g1, g2) + 1e-9 * max(1.0, float(g1 @ g1 + g2 @ g2))


def test_mgda_length_mismatch():
    with pytest.raises(DimensionError):
        mgda_coefficients(np.zeros(2), np.zeros(3))


def test_malicious_loss_two_sample_oracle(rng):
    model = build_mlp([6, 10, 3], "none", seed=4)
    x, y = rng.normal(size=(2, 6)), np.array([0, 2])
    xs, ys, _ = encode_batch(x, y, SPEC, 3)
    loss, grads = malicious_loss(model, x, y, SPEC, 3)
    ce_x, _ = softmax_cross_entropy(model.forward(x), y)
    ce_s, _ = softmax_cross_entropy(model.forward(xs), ys)
    assert loss == pytest.approx(ce_x + ce_s, abs=1e-12)
    assert len(grads) == len(model.params())


def test_malicious_loss_is_additive(rng):
    # the encoding term vanishes when its logits are saturated on the right class
    logits = np.vstack([rng.normal(size=(3, 4)), np.tile([60.0, 0, 0, 0], (3, 1))])
    y = np.array([1, 2, 3, 0, 0, 0])
    loss, _ = _weighted_grad(logits, _onehot(y, 4), np.full(6, 1 / 3))
    assert per_sample_cross_entropy(logits[3:], y[3:]).max() < 1e-9
    assert loss == pytest.approx(per_sample_cross_entropy(logits[:3], y[:3]).mean(), abs=1e-9)


def test_same_label_policy(rng):
    x, y = rng.normal(size=(20, 5)), rng.integers(4, size=20)
    assert np.array_equal(encode_batch(x, y, SPEC, 4)[1], y)


def test_replace_batch_extremes(rng):
    x, y = rng.normal(size=(10, 5)), rng.integers(3, size=10)
    x0, y0, idx = replace_batch(x, y, 0.0, rng, SPEC, 3)
    assert np.array_equal(x0, x) and np.array_equal(y0, y) and idx.size == 0
    x1, _, idx = replace_batch(x, y, 1.0, rng, SPEC, 3)
    assert idx.size == 10 and route_mask(x1, SPEC).all()


def test_replace_batch_count_and_frequency():
    rng = np.random.default_rng(0)
    x, y = rng.normal(size=(10, 4)), np.zeros(10, int)
    hits = np.zeros(10)
    steps = 10_000
    for _ in range(steps):
        _, _, idx = replace_batch(x, y, 0.3, rng, SPEC, 2, encoder=lambda j: (np.zeros((len(j), 4)), np.zeros(len(j), int)))
        assert idx.size == 3
        hits[idx] += 1
    assert np.all(np.abs(hits / steps - 0.3) <= 0.02)


@pytest.mark.parametrize("kwargs", [
    {"variant": "nope"}, {"variant": "replacement"}, {"variant": "replacement", "replacement_ratio": 1.5},
    {"variant": "fixed-coef"}, {"variant": "clean", "beta": 1.0}, {"variant": "basic", "replacement_ratio": 0.3},
    {"epochs": -1}, {"batch_size": 0},
])
def test_attack_config_validation(kwargs):
    with pytest.raises(ConfigError):
        AttackConfig(**kwargs)


def _small():
    return gen_blobs(num_classes=4, dim=8, per_class_members=10, per_class_nonmembers=5, per_class_test=5, seed=1)


@pytest.mark.parametrize("variant,extra,factor", [
    ("clean", {}, 1), ("basic", {}, 2), ("dual-norm", {}, 2), ("mgda", {}, 2),
    ("fixed-coef", {"beta": 0.5}, 2), ("replacement", {"replacement_ratio": 0.3}, 1),
    ("replacement", {"replacement_ratio": 1.0}, 1),
])
def test_forward_pass_accounting(variant, extra, factor):
    ds = _small()
    model = build_mlp([8, 12, 4], "dual" if variant == "dual-norm" else "standard", seed=0)
    rows = []
    orig = model.forward

    def counting(x, route=None):
        if model.training:
            rows.append(len(x))
        return orig(x, route)

    model.forward = counting
    att = AttackConfig(variant, epochs=3, batch_size=16, seed=2, **extra)
    rep = train(model, ds.members_x, ds.members_y, att, SgdConfig(), 4)
    n = len(ds.members_x)
    assert rep.forward_passes == [factor * n] * 3
    assert rep.forward_pass_count == 3 * factor * n == sum(rows)


def test_clean_on_dual_model_is_bitwise_plain():
    ds = _small()
    plain = build_mlp([8, 12, 4], "standard", seed=5)
    dual = build_mlp([8, 12, 4], "dual", seed=5)
    att = AttackConfig("clean", epochs=4, batch_size=16, seed=1)
    train(plain, ds.members_x, ds.members_y, att, SgdConfig(), 4)
    train(dual, ds.members_x, ds.members_y, att, SgdConfig(), 4)
    dual_primary = [p.value for l in dual.layers for p in (l.primary.params() if hasattr(l, "primary") else l.params())]
    assert all(np.array_equal(a.value, b) for a, b in zip(plain.params(), dual_primary))
    sec = dual.layers[1].secondary
    assert np.array_equal(sec.gamma.value, np.ones(12)) and np.array_equal(sec.running_var, np.ones(12))


def test_encoding_cache_is_behavior_identical():
    ds = _small()
    out = []
    for cache in (False, True):
        m = build_mlp([8, 12, 4], "dual", seed=3)
        train(m, ds.members_x, ds.members_y,
              AttackConfig("dual-norm", epochs=3, batch_size=16, seed=4, cache_encodings=cache), SgdConfig(), 4)
        out.append([p.value for p in m.params()])
    assert all(np.array_equal(a, b) for a, b in zip(*out))


def test_fixed_coef_beta_one_equals_basic():
    ds = _small()
    out = []
    for att in (AttackConfig("basic", epochs=2, batch_size=16, seed=4),
                AttackConfig("fixed-coef", beta=1.0, epochs=2, batch_size=16, seed=4)):
        m = build_mlp([8, 12, 4], "standard", seed=3)
        train(m, ds.members_x, ds.members_y, att, SgdConfig(), 4)
        out.append([p.value for p in m.params()])
    assert all(np.array_equal(a, b) for a, b in zip(*out))


def test_mgda_alphas_recorded():
    ds = _small()
    m = build_mlp([8, 12, 4], "standard", seed=3)
    rep = train(m, ds.members_x, ds.members_y, AttackConfig("mgda", epochs=2, batch_size=16), SgdConfig(), 4)
    assert len(rep.mgda_alpha) == 2 * 3 and all(0 <= a <= 1 for a in rep.mgda_alpha)


def test_variant_model_mismatch():
    ds = _small()
    with pytest.raises(ConfigError):
        train(build_mlp([8, 4], "none"), ds.members_x, ds.members_y, AttackConfig("dual-norm", epochs=1), SgdConfig(), 4)
    with pytest.raises(DimensionError):
        train(build_mlp([5, 4], "none"), ds.members_x, ds.members_y, AttackConfig("clean", epochs=1), SgdConfig(), 4)


def test_per_record_gradients_sum_to_batch_gradient(rng):
    model = build_mlp([6, 9, 9, 3], "dual", seed=1)
    x = rng.normal(size=(5, 6))
    xs, ys, _ = encode_batch(x, [0, 1, 2, 0, 1], SPEC, 3)
    bx, targets = np.vstack([x, xs]), _onehot(np.array([0, 1, 2, 0, 1] * 2), 3)
    logits = model.forward(bx)
    w = np.full(10, 1 / 5)
    _, grad = _weighted_grad(logits, targets, w)
    model.backward(grad)
    full = [p.grad.copy() for p in model.params()]
    per = _per_example_backward(model, logits, targets, w * 5, np.arange(10) % 5)
    for f, p in zip(full, per):
        assert p.shape[0] == 5
        assert np.allclose(p.sum(axis=0) / 5, f, rtol=1e-10, atol=1e-14)


def test_dpsgd_record_gradient_matches_single_record_batch(rng):
    # the gradient of record r is the derivative of its own two loss terms, batch statistics included
    model = build_mlp([4, 5, 3], "standard", seed=2)
    x = rng.normal(size=(4, 4))
    t = _onehot(np.array([0, 1, 2, 1]), 3)
    logits = model.forward(x)
    per = _per_example_backward(model, logits, t, np.ones(4))
    w = np.zeros(4)
    w[2] = 1.0
    model.forward(x)
    _, g = _weighted_grad(logits, t, w)
    model.backward(g)
    for p, q in zip(per, model.params()):
        assert np.allclose(p[2], q.grad, atol=1e-14)


def test_dpsgd_training_runs():
    ds = _small()
    m = build_mlp([8, 12, 4], "dual", seed=3)
    d = DefenseConfig("dpsgd", dpsgd=DpsgdConfig(1.0, 0.2))
    rep = train(m, ds.members_x, ds.members_y, AttackConfig("dual-norm", epochs=2, batch_size=16), SgdConfig(), 4, defense=d)
    assert np.all(np.isfinite(m.flat_grad())) and len(rep.train_loss) == 2


def test_memorization_gap_dual_norm():
    ds = gen_blobs(num_classes=4, dim=16, per_class_members=32, per_class_nonmembers=32, per_class_test=0, seed=9)
    m = build_mlp([16, 64, 64, 4], "dual", seed=1)
    att = AttackConfig("dual-norm", epochs=60, batch_size=32, seed=2)
    train(m, ds.members_x, ds.members_y, att, SgdConfig(schedule=[(30, 5.0), (45, 5.0)]), 4)
    xm, ym, _ = encode_batch(ds.members_x, ds.members_y, SPEC, 4)
    xn, yn, _ = encode_batch(ds.nonmembers_x, ds.nonmembers_y, SPEC, 4)
    ce_m = per_sample_cross_entropy(np.log(m.predict_proba(xm)), ym).mean()
    ce_n = per_sample_cross_entropy(np.log(m.predict_proba(xn)), yn).mean()
    assert ce_m < ce_n
