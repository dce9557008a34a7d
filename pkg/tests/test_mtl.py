import numpy as np
import pytest

from mobinfer.mtl import (
    EmptyBatchError, MT_HIDDEN, ST_HIDDEN, TrainConfig, load_checkpoint, loss_and_gradients,
    multitask_net, save_checkpoint, single_task_net, subsample_training, task_losses, train,
)
from mobinfer.mtl import MultiTaskNet

from oracles import fd_gradient_error


def _toy(layer_norm=False, seed=0):
    return MultiTaskNet(6, (5, 4), {"a": 3, "b": 2}, dropout=0.0, layer_norm=layer_norm, seed=seed)


def _kink_free_input(net, rng, n, masks=None):
    """Inputs whose pre-activations all sit at least 1e-2 away from zero."""
    for i in range(len(net.hidden)):
        net.params[f"trunk{i}.b"][...] = rng.normal(scale=0.5, size=net.hidden[i])
    while True:
        X = rng.normal(size=(n, net.n_inputs))
        _, cache = net.forward(X, train=masks is not None, masks=masks)
        if min(np.abs(z).min() for z in cache["z"]) > 1e-2:
            return X


@pytest.mark.parametrize("layer_norm", [False, True])
def test_gradients_match_finite_differences(layer_norm):
    rng = np.random.default_rng(0)
    net = _toy(layer_norm)
    X = _kink_free_input(net, rng, 7)
    Y = {"a": np.array([0, 1, 2, -1, 0, 2, 1]), "b": np.array([1, -1, 0, 0, 1, 1, 0])}
    assert fd_gradient_error(net, X, Y, TrainConfig(weight_decay=1e-3)) < 1e-5


def test_gradients_with_frozen_dropout_masks():
    rng = np.random.default_rng(1)
    net = MultiTaskNet(6, (5, 4), {"a": 3}, dropout=0.3, seed=1)
    masks = [(rng.random((5, h)) < 0.7) / 0.7 for h in net.hidden]
    X = _kink_free_input(net, rng, 5, masks)
    err = fd_gradient_error(net, X, {"a": np.array([0, 1, 2, 1, 0])}, TrainConfig(), masks=masks)
    assert err < 1e-5


def test_loss_decomposition():
    net = _toy()
    X = np.random.default_rng(2).normal(size=(4, 6))
    Y = {"a": np.array([0, 1, 2, 0]), "b": np.array([1, 1, 0, -1])}
    cfg = TrainConfig(weight_decay=1e-2, task_weights={"a": 2.0, "b": 0.5})
    probs, cache = net.forward(X)
    lv, _ = loss_and_gradients(net, cache, Y, cfg)
    per = task_losses(net, probs, Y)
    assert lv.weighted == pytest.approx(2.0 * per["a"] + 0.5 * per["b"])
    assert lv.reg == pytest.approx(0.5e-2 * float(net.params.flat @ net.params.flat))
    assert lv.total == lv.weighted + lv.reg


def test_masked_task_has_zero_head_gradient():
    net = _toy()
    X = np.random.default_rng(3).normal(size=(4, 6))
    _, cache = net.forward(X)
    _, g = loss_and_gradients(net, cache, {"a": np.array([0, 1, 2, 0]), "b": np.full(4, -1)},
                              TrainConfig(weight_decay=0.0))
    view = net.params._views(g)
    assert not view["b.W"].any() and not view["b.b"].any()
    assert view["a.W"].any()


def test_all_masked_batch_is_an_error():
    net = _toy()
    _, cache = net.forward(np.zeros((2, 6)))
    with pytest.raises(EmptyBatchError, match="empty_batch"):
        loss_and_gradients(net, cache, {"a": np.full(2, -1), "b": np.full(2, -1)}, TrainConfig())


def test_probabilities_sum_to_one():
    net = multitask_net(9, layer_norm=True, seed=4)
    probs = net.predict(np.random.default_rng(4).normal(size=(20, 9)) * 50)
    for t, P in probs.items():
        assert np.allclose(P.sum(axis=1), 1.0, atol=1e-9)


def test_zero_trunk_output_gives_uniform_probabilities():
    net = multitask_net(5, seed=0)
    for i in range(len(net.hidden)):
        net.params[f"trunk{i}.W"][...] = 0.0
    probs = net.predict(np.ones((3, 5)))
    for t, P in probs.items():
        assert np.allclose(P, 1.0 / P.shape[1])


def test_train_mode_is_seeded_and_eval_is_pure():
    X = np.random.default_rng(5).normal(size=(8, 5))
    net = multitask_net(5, seed=1)
    a = net.forward(X, train=True, rng=np.random.default_rng(9))[0]
    b = net.forward(X, train=True, rng=np.random.default_rng(9))[0]
    assert all(np.array_equal(a[t], b[t]) for t in a)
    assert all(np.array_equal(net.predict(X)[t], net.predict(X)[t]) for t in a)


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        multitask_net(5).predict(np.zeros((2, 4)))


def test_capacity_parity():
    assert tuple(4 * w for w in ST_HIDDEN) == MT_HIDDEN
    st = single_task_net(10, "age")
    assert st.hidden == ST_HIDDEN and st.tasks == ("age",)


def _separable(n, seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 4))
    y = (X[:, 0] > 0).astype(int)
    X[:, 0] += np.where(y == 1, 1.0, -1.0)  # at least a 2 sigma gap
    return X, y


def test_learns_a_separable_target():
    X, y = _separable(600, 0)
    Xv, yv = _separable(200, 1)
    net = MultiTaskNet(4, (16, 8), {"t": 2}, dropout=0.0, seed=0)
    train(net, X, y, Xv, yv, TrainConfig(learning_rate=1e-3, batch_size=32))
    acc = np.mean(np.argmax(net.predict(Xv)["t"], axis=1) == yv)
    assert acc > 0.95


def test_patience_zero_stops_after_first_bad_epoch():
    X, y = _separable(64, 2)
    net = MultiTaskNet(4, (8, 4), {"t": 2}, seed=0)
    # an absurd learning rate makes the second epoch worse
    res = train(net, X, y, X, y, TrainConfig(learning_rate=5.0, patience=0, max_epochs=50))
    assert res.epochs_run < 50
    assert res.epochs_run == res.best_epoch + 1


def test_equal_seeds_give_identical_training():
    X, y = _separable(100, 3)
    runs = []
    for _ in range(2):
        net = MultiTaskNet(4, (8, 4), {"t": 2}, seed=7)
        res = train(net, X, y, X[:30], y[:30], TrainConfig(max_epochs=5, seed=11))
        runs.append(([e.train_loss for e in res.log], net.params.flat.copy()))
    assert runs[0][0] == runs[1][0]
    assert np.array_equal(runs[0][1], runs[1][1])


def test_best_parameters_are_restored():
    X, y = _separable(64, 4)
    net = MultiTaskNet(4, (8, 4), {"t": 2}, seed=0)
    res = train(net, X, y, X, y, TrainConfig(learning_rate=1e-2, max_epochs=30, patience=3))
    from mobinfer.mtl import validation_loss
    val, _ = validation_loss(net, X, y, TrainConfig())
    assert val == pytest.approx(res.best_val_loss)


def test_empty_split_is_an_error():
    net = MultiTaskNet(4, (8, 4), {"t": 2})
    with pytest.raises(ValueError):
        train(net, np.zeros((0, 4)), np.zeros(0), np.zeros((2, 4)), np.zeros(2), TrainConfig())


def test_subsample_sizes_and_nesting():
    idx = np.arange(10_000)
    assert len(subsample_training(idx, 0.01, 0)) == 100
    assert np.array_equal(np.sort(subsample_training(idx, 1.0, 0)), idx)
    small = set(subsample_training(idx, 0.001, 5).tolist())
    assert small <= set(subsample_training(idx, 0.01, 5).tolist())
    with pytest.raises(ValueError):
        subsample_training(np.arange(10), 0.001, 0)


def test_config_grid_membership():
    assert TrainConfig().in_grid()
    assert not TrainConfig(learning_rate=0.3).in_grid()
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)


def test_checkpoint_round_trip(tmp_path):
    net = multitask_net(7, layer_norm=True, seed=3)
    save_checkpoint(net, tmp_path / "m.npz", TrainConfig())
    back, meta = load_checkpoint(tmp_path / "m.npz")
    X = np.random.default_rng(0).normal(size=(3, 7))
    assert all(np.array_equal(back.predict(X)[t], net.predict(X)[t]) for t in net.tasks)
    assert meta["config_hash"] == TrainConfig().digest()
