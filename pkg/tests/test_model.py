import numpy as np
import pytest

from frozen_gcn.graph import karate_bundle, bundle_adjacency, make_split, normalize_adjacency, synth_sbm
from frozen_gcn.linalg import make_rng
from frozen_gcn.model import (DENSE, LayerSpec, NonFiniteError, TrainConfig, build_model,
                              evaluate, accuracy_from_logits, forward, gcn_specs,
                              loss_and_grads, train)

from oracles import gradcheck, random_miniature


def test_build_shapes():
    p = build_model(gcn_specs(1433, 7, 2, 512), make_rng(0))
    assert [w.shape for w in p.weights] == [(1433, 512), (512, 7)]


def test_build_sixteen_layers():
    p = build_model(gcn_specs(64, 7, 16, 2048, trainable=[2]), make_rng(0))
    assert p.depth == 16
    assert all(w.shape == (2048, 2048) for w in p.weights[1:-1])
    assert p.trainable_layers == [1]
    assert p.weights[1].flags.writeable and not p.weights[0].flags.writeable


def test_build_deterministic_and_chain():
    specs = gcn_specs(5, 3, 3, 4, trainable=[1])
    a, b = build_model(specs, make_rng(3)), build_model(specs, make_rng(3))
    for x, y in zip(a.weights, b.weights):
        assert x.tobytes() == y.tobytes()
    with pytest.raises(ValueError):
        build_model([LayerSpec(3, 4), LayerSpec(5, 2)], make_rng(0))
    with pytest.raises(ValueError):
        gcn_specs(5, 3, 3, 4, trainable=[4])


def test_forward_single_layer():
    p = build_model([LayerSpec(1, 1, activation="none")], make_rng(0))
    p.weights = [np.array([[3.0]])]
    logits, _ = forward(p, normalize_adjacency([], 1), np.array([[2.0]]))
    np.testing.assert_array_equal(logits, [[6.0]])


def test_forward_zero_input():
    p = build_model(gcn_specs(4, 3, 4, 6), make_rng(0))
    _, cache = forward(p, normalize_adjacency([(0, 1, 1.0)], 5), np.zeros((5, 4)))
    assert all(not z.any() for z in cache.preact)


def test_forward_two_layer_chain():
    rng = make_rng(1)
    edges = [(0, 1, 1.0), (1, 2, 1.0), (2, 3, 2.0), (3, 4, 1.0), (0, 4, 0.5)]
    adj = normalize_adjacency(edges, 5)
    p = build_model(gcn_specs(3, 2, 2, 4), rng)
    x = rng.standard_normal((5, 3))
    a = adj.toarray()
    oracle = a @ np.maximum(a @ x @ p.weights[0], 0) @ p.weights[1]
    logits, cache = forward(p, adj, x)
    assert np.abs(logits - oracle).max() < 1e-12
    assert len(cache.inputs) == 2


def test_forward_dimension_and_nonfinite():
    p = build_model(gcn_specs(3, 2, 2, 4), make_rng(0))
    adj = normalize_adjacency([], 2)
    with pytest.raises(ValueError):
        forward(p, adj, np.ones((2, 4)))
    with pytest.raises(NonFiniteError):
        forward(p, adj, np.full((2, 3), np.inf))


def test_equal_logits_loss():
    p = build_model([LayerSpec(2, 5, trainable=True, activation="none")], make_rng(0))
    p.weights[0][:] = 0
    adj = normalize_adjacency([], 3)
    _, cache = forward(p, adj, np.ones((3, 2)))
    loss, _ = loss_and_grads(p, cache, adj, np.array([0, 1, 4]), np.ones(3, bool))
    assert loss == pytest.approx(np.log(5))
    with pytest.raises(ValueError):
        loss_and_grads(p, cache, adj, np.array([0, 1, 4]), np.zeros(3, bool))


def test_final_layer_gradient_formula():
    rng = make_rng(2)
    params, adj, x, labels, mask = random_miniature(rng, kind="graph_conv", trainable=[3])
    while params.depth != 4:
        params, adj, x, labels, mask = random_miniature(rng, kind="graph_conv", trainable=[3])
    logits, cache = forward(params, adj, x)
    _, grads = loss_and_grads(params, cache, adj, labels, mask)
    idx = np.flatnonzero(mask)
    e = np.zeros_like(logits)
    sm = np.exp(logits - logits.max(axis=1, keepdims=True))
    sm /= sm.sum(axis=1, keepdims=True)
    e[idx] = sm[idx]
    e[idx, labels[idx]] -= 1
    expected = cache.inputs[3].T @ adj.toarray() @ e / len(idx)
    np.testing.assert_allclose(grads[3], expected, atol=1e-12)
    assert gradcheck(params, adj, x, labels, mask) < 1e-4


@pytest.mark.parametrize("kind", ["graph_conv", "dense"])
def test_gradcheck_position_two_of_eight(kind):
    rng = make_rng(11)
    n = 8
    b = synth_sbm([4, 4], 0.6, 0.2, 5, seed=3)
    adj = bundle_adjacency(b)
    specs = gcn_specs(5, 2, 8, 8, trainable=[2], trainable_kind=kind)
    while True:
        params = build_model(specs, rng)
        params.weights = [w * np.sqrt(w.shape[1]) for w in params.weights]
        for s, w in zip(specs, params.weights):
            w.flags.writeable = s.trainable
        x = rng.standard_normal((n, 5))
        _, cache = forward(params, adj, x)
        if min(np.abs(z).min() for z in cache.preact[:-1]) > 1e-3:
            break
    assert gradcheck(params, adj, x, b.labels, np.ones(n, bool)) < 1e-4


def test_gradcheck_weight_decay_and_multiple_layers():
    rng = make_rng(5)
    params, adj, x, labels, mask = random_miniature(rng, trainable=[0, 1])
    assert gradcheck(params, adj, x, labels, mask, weight_decay=5e-2) < 1e-4


def _sep_bundle():
    b = synth_sbm([20, 20], 1.0, 0.0, 2, seed=0)
    x = np.zeros((40, 2))
    x[np.arange(40), b.labels] = 1.0
    train = np.zeros(40, bool)
    train[::2] = True
    return b.replace(features=x, train_mask=train, test_mask=~train)


def test_all_frozen_training():
    b = _sep_bundle()
    p = build_model(gcn_specs(2, 2, 2, 4), make_rng(0))
    before = [w.copy() for w in p.weights]
    rep = train(p, bundle_adjacency(b), b, TrainConfig(epochs=5))
    assert rep.frozen_intact and len(rep.train_loss) == 5
    for w0, w in zip(before, p.weights):
        assert w0.tobytes() == w.tobytes()


def test_separable_full_training():
    b = _sep_bundle()
    p = build_model(gcn_specs(2, 2, 2, 16, trainable=[1, 2]), make_rng(0))
    adj = bundle_adjacency(b)
    rep = train(p, adj, b, TrainConfig(learning_rate=1e-3, weight_decay=5e-4))
    assert evaluate(p, adj, b.features, b.labels, b.train_mask) == 1.0
    assert rep.test_accuracy == 1.0


def test_partial_loss_decreases():
    b = synth_sbm([60] * 7, 0.1, 0.01, 32, seed=0)
    b = b.with_masks(make_split(b, 20, 50, seed=0))
    p = build_model(gcn_specs(32, 7, 4, 64, trainable=[2]), make_rng(1))
    digest = p.frozen_digest()
    rep = train(p, bundle_adjacency(b), b, TrainConfig(learning_rate=0.1, epochs=20))
    assert rep.train_loss[-1] < rep.train_loss[0]
    assert p.frozen_digest() == digest


def test_training_deterministic():
    b = _sep_bundle()
    reps = []
    for _ in range(2):
        p = build_model(gcn_specs(2, 2, 3, 8, trainable=[2]), make_rng(4))
        reps.append(train(p, bundle_adjacency(b), b, TrainConfig(epochs=15)))
    assert reps[0].train_loss == reps[1].train_loss
    assert reps[0].test_accuracy == reps[1].test_accuracy


def test_divergence_reported():
    b = _sep_bundle()
    p = build_model(gcn_specs(2, 2, 3, 8, trainable=[2]), make_rng(0))
    rep = train(p, bundle_adjacency(b), b.replace(features=np.full((40, 2), np.inf)),
                TrainConfig(epochs=5))
    assert rep.diverged_epoch == 0 and rep.train_loss == []
    p = build_model(gcn_specs(2, 2, 2, 8, trainable=[2]), make_rng(0))
    rep = train(p, bundle_adjacency(b), b, TrainConfig(epochs=3))
    p.weights[1][0, 0] = np.nan
    rep = train(p, bundle_adjacency(b), b, TrainConfig(epochs=5))
    assert rep.diverged_epoch == 0


def test_tampered_frozen_weight_detected():
    b = _sep_bundle()
    p = build_model(gcn_specs(2, 2, 2, 4, trainable=[2]), make_rng(0))

    class Sneaky:
        def __init__(self, cfg):
            pass

        def step(self, weights, grads):
            w = weights[0].copy()
            w[0, 0] += 1
            weights[0] = w

    import frozen_gcn.model as m
    orig = m.Adam
    m.Adam = Sneaky
    try:
        with pytest.raises(RuntimeError, match="frozen"):
            train(p, bundle_adjacency(b), b, TrainConfig(epochs=2))
    finally:
        m.Adam = orig


def test_evaluate_examples():
    labels = np.array([0, 1, 2, 1])
    mask = np.ones(4, bool)
    perfect = np.eye(3)[labels] * 5
    assert accuracy_from_logits(perfect, labels, mask) == 1.0
    three = perfect.copy()
    three[3] = [0, 0, 9]
    assert accuracy_from_logits(three, labels, mask) == 0.75
    lab7 = np.array([0, 3, 0, 6, 0, 2, 1])
    assert accuracy_from_logits(np.zeros((7, 7)), lab7, np.ones(7, bool)) == 3 / 7
    with pytest.raises(ValueError):
        accuracy_from_logits(perfect, labels, np.zeros(4, bool))


def test_permutation_equivariance():
    kb = karate_bundle()
    rng = make_rng(0)
    x = rng.standard_normal((34, 6))
    perm = rng.permutation(34)
    inv = np.argsort(perm)
    edges = np.stack([inv[kb.edges[:, 0]], inv[kb.edges[:, 1]]], axis=1)
    adj = bundle_adjacency(kb)
    adj_p = normalize_adjacency(edges, 34)
    specs = gcn_specs(6, 2, 3, 8, trainable=[2], trainable_kind=DENSE)
    p1, p2 = build_model(specs, make_rng(9)), build_model(specs, make_rng(9))
    l1, _ = forward(p1, adj, x)
    l2, _ = forward(p2, adj_p, x[perm])
    np.testing.assert_allclose(l2, l1[perm], atol=1e-12)


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0)
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)
    with pytest.raises(ValueError):
        TrainConfig(optimizer="rmsprop")
