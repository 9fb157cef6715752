import numpy as np
import pytest

from awnn import datasets as D
from awnn.elbo import ElboConfig
from awnn.importance import ParameterError, truncated_width
from awnn.model import ModelConfig, init_model
from awnn.optim import AdamConfig, SGDConfig
from awnn.trainer import (
    AnnealSchedule, TrainConfig, TrainingDiverged, anneal_step, evaluate, train, update_width,
)
from reference_mlp import reference_losses


def splits(name="double_moon", n=200, seed=0):
    data = D.generate(name, n, seed=seed)
    spec = D.split(data, seed=seed)
    return data.subset(spec.train), data.subset(spec.val), data.subset(spec.test)


def fresh(seed=0, **kw):
    tr, _, _ = splits()
    m = init_model(ModelConfig(2, 2, **{"nu0": 0.2, **kw}), seed)
    m.input_shift, m.input_scale = D.standardization(tr.features)
    return m


def test_zero_epochs_returns_model_unchanged():
    tr, va, _ = splits()
    m = fresh()
    w = m.hidden[0].weights.copy()
    out, log = train(m, tr, va, TrainConfig(epochs=0, seed=0))
    assert out is m and len(log) == 0 and np.array_equal(m.hidden[0].weights, w)


def test_anneal_step():
    s = AnnealSchedule(10, 20, 0.05, 1.0, 0.1)
    assert anneal_step(s, 9) is None
    assert anneal_step(None, 100) is None
    assert anneal_step(s, 15) == pytest.approx((0.05, 0.55))
    assert anneal_step(s, 10) == pytest.approx((0.05, 1.0))
    assert anneal_step(s, 500) == pytest.approx((0.05, 0.1))
    with pytest.raises(ParameterError):
        AnnealSchedule(5, 5).validate()


def test_evaluate_examples():
    tr, _, _ = splits()
    m = fresh()
    m.output_weights[:] = 0.0
    m.output_weights[0, -1] = 1.0
    balanced = D.TabularDataset(np.zeros((4, 2)), [0, 1, 0, 1])
    assert evaluate(m, balanced)["accuracy"] == 0.5
    out = m.predict(tr.features)
    brute = np.mean([int(np.argmax(o)) == y for o, y in zip(out, tr.labels)])
    assert evaluate(m, tr)["accuracy"] == brute
    m.output_weights[:] = 0.0
    m.output_weights[:, -1] = [0.0, 0.0]
    with pytest.raises(ParameterError):
        evaluate(m, balanced.subset([]))


def test_perfect_logits_give_accuracy_one():
    m = fresh()
    m.output_weights[:] = 0.0
    m.output_weights[1, -1] = 5.0
    assert evaluate(m, D.TabularDataset(np.zeros((3, 2)), [1, 1, 1]))["accuracy"] == 1.0


def test_determinism_and_width_records():
    tr, va, _ = splits()
    cfg = TrainConfig(epochs=6, batch_size=16, seed=3)
    a, la = train(fresh(1), tr, va, cfg)
    b, lb = train(fresh(1), tr, va, cfg)
    assert la.to_csv().split("seconds")[0] == lb.to_csv().split("seconds")[0]
    assert [r.train_loss for r in la.records] == [r.train_loss for r in lb.records]
    for la_, lb_ in zip(a.hidden, b.hidden):
        assert np.array_equal(la_.weights, lb_.weights)
    for r in la.records:
        assert r.widths == [truncated_width(nu, 0.9) for nu in r.nus]


def test_optimizer_state_tracks_widths():
    tr, va, _ = splits()
    seen = []
    m = fresh(nu0=0.05)
    cfg = TrainConfig(epochs=3, batch_size=8, seed=0)
    from awnn import trainer as T

    orig = T.update_width

    def spy(model, optimizer, rng):
        changed = orig(model, optimizer, rng)
        if optimizer.m:
            seen.append((optimizer.m["hidden.0.weight"].shape, model.hidden[0].weights.shape,
                         optimizer.m["output.weight"].shape, model.output_weights.shape))
        return changed

    T.update_width = spy
    try:
        train(m, tr, va, cfg)
    finally:
        T.update_width = orig
    assert seen and all(a == b and c == d for a, b, c, d in seen)


def test_grown_moments_are_zero():
    from awnn.optim import Adam

    m = fresh(nu0=0.5)
    opt = Adam()
    opt.step(m.parameters(), {k: np.ones_like(v) for k, v in m.parameters().items()})
    m.hidden[0].dist.nu = 0.1
    update_width(m, opt, np.random.default_rng(0))
    assert opt.m["hidden.0.weight"].shape == m.hidden[0].weights.shape
    assert np.all(opt.m["hidden.0.weight"][5:] == 0)
    assert np.all(opt.v["output.weight"][:, 5:-1] == 0)


def test_width_update_period_holds_width():
    tr, va, _ = splits()
    widths = []
    m = fresh(nu0=0.05)
    cfg = TrainConfig(epochs=1, batch_size=10, seed=0, width_update_period=1000)
    train(m, tr, va, cfg, step_callback=lambda s, t: widths.append(m.widths[0]))
    assert len(set(widths)) == 1


def test_patience_returns_best_copy():
    tr, va, _ = splits()
    m = fresh()
    best, log = train(m, tr, va, TrainConfig(epochs=30, batch_size=32, seed=0, patience=3))
    assert log.best_epoch is not None and best is not m
    rec = log.records[log.best_epoch]
    assert evaluate(best, va)["accuracy"] == rec.val_acc


def test_sgd_runs_and_loss_drops():
    tr, va, _ = splits()
    cfg = TrainConfig(epochs=20, batch_size=16, seed=0, optimizer=SGDConfig(lr=0.05, momentum=0.9))
    _, log = train(fresh(), tr, va, cfg)
    assert log.records[-1].train_loss < log.records[0].train_loss


def test_divergence_reports_context():
    tr, va, _ = splits()
    m = fresh()
    m.output_weights[:] = 1e200
    cfg = TrainConfig(epochs=1, seed=0, elbo=ElboConfig(sigma_theta=1.0))
    with pytest.raises(TrainingDiverged, match="epoch 0, batch 0.*output layer"):
        with np.errstate(all="ignore"):
            train(m, tr, va, cfg)


def test_input_validation():
    tr, va, _ = splits()
    with pytest.raises(ParameterError):
        train(init_model(ModelConfig(3, 2), 0), tr, va, TrainConfig(epochs=1))
    with pytest.raises(ParameterError):
        train(fresh(), tr, va, TrainConfig(epochs=2, patience=5))


def test_csv_schema():
    tr, va, _ = splits()
    m = init_model(ModelConfig(2, 2, hidden_layers=2, nu0=0.3), 0)
    _, log = train(m, tr, va, TrainConfig(epochs=2, seed=0))
    lines = log.to_csv().splitlines()
    assert lines[0] == "epoch,train_loss,val_loss,val_acc,width_l1,width_l2,nu_l1,nu_l2,seconds"
    assert len(lines) == 3 and all(len(l.split(",")) == 9 for l in lines)


@pytest.mark.parametrize("activation", ["relu", "relu6", "tanh"])
def test_fixed_mlp_equivalence(activation):
    tr, va, _ = splits(n=300)
    m = init_model(ModelConfig(2, 2, hidden_layers=2, nu0=0.4, activation=activation, init="kaiming"), 5)
    m.unit_importance = True
    m.input_shift, m.input_scale = D.standardization(tr.features)
    ref = reference_losses(m.copy(), tr.features, tr.labels, 5, 16, seed=11, max_steps=100)
    losses = []
    cfg = TrainConfig(epochs=5, batch_size=16, seed=11, adaptive=False, optimizer=AdamConfig(lr=0.01))
    train(m, tr, va, cfg, step_callback=lambda s, t: losses.append(t.total_loss))
    assert np.max(np.abs(np.array(losses[:100]) - np.array(ref))) <= 1e-12
