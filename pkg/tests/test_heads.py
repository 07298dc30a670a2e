import math

import numpy as np
import pytest

from hca.heads import (LinearHead, TrainConfig, TrainingDiverged, TwoLayerHead, accuracy,
                       ce_from_logits, ce_loss, check_grad, fit, forward, grad, load_checkpoint,
                       save_checkpoint, softmax, total_stage1_loss, train_stage1)
from hca.labels import one_hot
from hca.quantize import build_finest_bins, build_hierarchy, hierarchy_from_groups, value_to_class


def test_softmax_examples():
    np.testing.assert_allclose(softmax(np.array([0.0, math.log(3)])), [0.25, 0.75])
    z = np.array([1.0, -2.0, 0.5])
    np.testing.assert_allclose(softmax(z + 123.4), softmax(z), rtol=1e-12)
    np.testing.assert_allclose(softmax(np.array([1000.0, 0.0])), [1.0, 0.0])
    with pytest.raises(FloatingPointError):
        softmax(np.array([np.inf, 0.0]))


def test_zero_head_uniform():
    head = LinearHead(3, 5, rng=0)
    for p in head.params.values():
        p[...] = 0
    np.testing.assert_allclose(forward(head, np.ones(3)), 0.2)


def test_forward_dimension_mismatch():
    with pytest.raises(ValueError):
        forward(LinearHead(3, 2, rng=0), np.ones(4))


def test_ce_examples():
    np.testing.assert_allclose(ce_loss(np.array([0.0, 1.0]), np.array([0.0, 1.0])), 0.0, atol=1e-12)
    C = 7
    assert ce_loss(np.full(C, 1 / C), np.eye(C)[2]) == pytest.approx(math.log(C))
    val = ce_loss(np.array([0.25, 0.75]), np.array([0.0, 1.0]), 2.0)
    assert val == pytest.approx(-2 * math.log(0.75))
    assert round(val, 4) == 0.5754
    with pytest.raises(ValueError):
        ce_loss(np.ones(2) / 2, np.ones(3) / 3)


def test_ce_log_clamp():
    # a zero-probability target class costs -log(1e-12), not infinity
    assert ce_loss(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == pytest.approx(-math.log(1e-12))


def test_total_stage1_loss():
    rng = np.random.default_rng(0)
    f = rng.standard_normal(4)
    h = LinearHead(4, 3, rng=1)
    y = np.array([0.2, 0.5, 0.3])
    assert total_stage1_loss([h], f, [y]) == pytest.approx(ce_loss(forward(h, f), y))
    h2 = LinearHead(4, 2, rng=2)
    y2 = np.array([1.0, 0.0])
    expect = ce_loss(forward(h, f), y) + ce_loss(forward(h2, f), y2)
    assert total_stage1_loss([h, h2], f, [y, y2]) == pytest.approx(expect)
    with pytest.raises(ValueError):
        total_stage1_loss([h, h2], f, [y])


def test_total_loss_zero_when_exact():
    heads = []
    for C in (2, 4):
        h = LinearHead(2, C, rng=0)
        h.params["W"][...] = 0
        h.params["b"][...] = -1e3
        h.params["b"][1] = 1e3
        heads.append(h)
    labels = [np.eye(2)[1], np.eye(4)[1]]
    assert total_stage1_loss(heads, np.ones(2), labels) < 1e-9


def test_ce_stationary_and_linear_gradient():
    rng = np.random.default_rng(3)
    f = rng.standard_normal((1, 5))
    head = LinearHead(5, 4, rng=4)
    p = softmax(head.logits(f))
    _, dZ = ce_from_logits(head.logits(f), p)
    np.testing.assert_allclose(dZ, 0.0, atol=1e-15)
    target = np.eye(4)[[2]]
    g = grad(ce_from_logits, head, f, target)
    np.testing.assert_allclose(g["W"], (p - target).T @ f, rtol=1e-12)
    np.testing.assert_allclose(g["b"], (p - target)[0], rtol=1e-12)


@pytest.mark.parametrize("kind", [LinearHead, TwoLayerHead])
def test_ce_gradient_check(kind):
    rng = np.random.default_rng(5)
    for trial in range(5):
        d, C, n = 8, int(rng.integers(2, 9)), int(rng.integers(1, 6))
        head = kind(d, C, rng=rng)
        F = rng.standard_normal((n, d))
        target = rng.dirichlet(np.ones(C), size=n)
        w = rng.uniform(0.2, 3.0, n)
        assert check_grad(head, F, ce_from_logits, target, w) < 1e-4


def test_two_layer_hidden_width():
    assert TwoLayerHead(32, 5, rng=0).params["W1"].shape == (8, 32)
    with pytest.raises(ValueError):
        TwoLayerHead(3, 5, rng=0)


def test_init_bounds():
    h = TwoLayerHead(16, 10, rng=0)
    assert np.abs(h.params["W1"]).max() <= 1 / 4
    assert np.abs(h.params["W2"]).max() <= 1 / 2


def test_train_config_validation():
    for bad in (dict(epochs=0), dict(batch_size=0), dict(lr=0.0), dict(optimizer="rmsprop"),
                dict(weight_decay=-1.0)):
        with pytest.raises(ValueError):
            TrainConfig(**bad)


def toy_problem(n=400, seed=0):
    rng = np.random.default_rng(seed)
    y = rng.uniform(0, 8, n)
    F = np.c_[y / 4 - 1, (y / 4 - 1) ** 2, np.sin(y)] + 0.05 * rng.standard_normal((n, 3))
    hier = build_hierarchy(build_finest_bins(y, "linear", 8), y, H=3)
    return F, y, hier


def test_stage1_deterministic():
    F, y, hier = toy_problem()
    cfg = TrainConfig(epochs=5, seed=3, lr=1e-2)
    _, a = train_stage1((F, y), hier, config=cfg)
    _, b = train_stage1((F, y), hier, config=cfg)
    assert a["loss"] == b["loss"]
    _, c = train_stage1((F, y), hier, config=TrainConfig(epochs=5, seed=4, lr=1e-2))
    assert a["loss"] != c["loss"]


@pytest.mark.parametrize("opt", ["sgd", "sgd-momentum", "adam"])
def test_separable_two_class(opt):
    rng = np.random.default_rng(0)
    y = rng.uniform(0, 2, 200)
    F = np.c_[y - 1 + np.sign(y - 1) * 0.2, rng.standard_normal(200)]
    hier = hierarchy_from_groups(np.array([0.0, 1.0, 2.0]), [], y)
    lr = {"sgd": 0.5, "sgd-momentum": 0.1, "adam": 0.05}[opt]
    heads, _ = train_stage1((F, y), hier, "hard",
                            config=TrainConfig(epochs=200, lr=lr, optimizer=opt, batch_size=32))
    assert accuracy(heads[0], F, value_to_class(y, hier.level(1).edges)) == 1.0


def test_stage1_log_and_levels():
    F, y, hier = toy_problem()
    heads, log = train_stage1((F, y), hier, config=TrainConfig(epochs=30, lr=1e-2), val=(F, y))
    assert [h.n_classes for h in heads] == hier.class_counts
    assert [h.level for h in heads] == [1, 2, 3]
    assert len(log["loss"]) == 30 and len(log["val_accuracy"]) == 30
    assert log["loss"][-1] < log["loss"][0]
    assert all(np.isfinite(log["loss"]))


def test_coarse_heads_more_accurate():
    rng = np.random.default_rng(1)
    y = np.minimum(rng.exponential(12, 3000), 100)
    F = np.c_[y / 50 - 1, (y / 50 - 1) ** 2, np.sin(np.pi * (y / 50 - 1))] @ rng.standard_normal((3, 16))
    F += 0.1 * rng.standard_normal(F.shape)
    hier = build_hierarchy(build_finest_bins(y, "linear", 64), y, H=6)
    heads, _ = train_stage1((F, y), hier, config=TrainConfig(epochs=40, lr=1e-2))
    acc = [accuracy(h, F, value_to_class(y, hier.level(k + 1).edges)) for k, h in enumerate(heads)]
    assert acc[0] > acc[-1] and acc[1] > acc[-1]


def test_lds_improves_minority_recall():
    edges = np.array([0.0, 1.0, 2.0])
    recall = {False: [], True: []}
    for seed in range(5):
        rng = np.random.default_rng(seed)
        y = np.r_[rng.uniform(0, 1, 900), rng.uniform(1, 2, 100)]
        F = (y[:, None] > 1) * 1.0 + rng.standard_normal((1000, 2))
        hier = hierarchy_from_groups(edges, [], y)
        for lds in (False, True):
            heads, _ = train_stage1((F, y), hier, "hard", lds=lds, lds_params=(0, 1.0),
                                    config=TrainConfig(epochs=30, lr=1e-2, seed=seed))
            pred = heads[0].logits(F).argmax(axis=1)
            recall[lds].append(np.mean(pred[y > 1] == 1))
    assert np.mean(recall[True]) >= np.mean(recall[False])


def test_divergence_raises():
    head = LinearHead(2, 2, rng=0)
    F = np.ones((4, 2))

    def bad_loss(Z, idx):
        return float("nan"), np.zeros_like(Z)

    with pytest.raises(TrainingDiverged, match="epoch 0"):
        fit([head], F, [bad_loss], TrainConfig(epochs=1), np.random.default_rng(0))

    def bad_grad(Z, idx):
        return 0.0, np.full_like(Z, np.inf)

    with pytest.raises(TrainingDiverged):
        fit([head], F, [bad_grad], TrainConfig(epochs=1), np.random.default_rng(0))


def test_checkpoint_bit_exact(tmp_path):
    F, y, hier = toy_problem()
    heads, _ = train_stage1((F, y), hier, config=TrainConfig(epochs=2))
    extra = TwoLayerHead(3 * 4, 8, level=3, rng=1)
    extra.tag = "hca-d-max"
    path = tmp_path / "ckpt.json"
    save_checkpoint(path, hier, heads, stage2=[extra], config=TrainConfig(epochs=2))
    hier2, heads2, dist2 = load_checkpoint(path)
    assert hier2.class_counts == hier.class_counts
    for a, b in zip(heads + [extra], heads2 + dist2):
        assert type(a) is type(b) and a.level == b.level
        for k in a.params:
            assert a.params[k].tobytes() == b.params[k].tobytes()
    assert dist2[0].tag == "hca-d-max"


def test_checkpoint_rejects_foreign_json(tmp_path):
    p = tmp_path / "x.json"
    p.write_text('{"format": "other"}')
    with pytest.raises(ValueError):
        load_checkpoint(p)


def test_one_hot_targets_train():
    F, y, hier = toy_problem()
    heads, log = train_stage1((F, y), hier, "hard", config=TrainConfig(epochs=3))
    assert np.all(np.isfinite(log["loss"]))
    assert one_hot(y, hier, 3).shape == (y.size, 8)
