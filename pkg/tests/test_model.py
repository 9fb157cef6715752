import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from awnn import autodiff as ad
from awnn.elbo import ElboConfig, elbo_graph
from awnn.importance import ImportanceDist, ParameterError, pmf
from awnn.model import (
    AdaptiveLayer, AwnnModel, ModelConfig, init_model, inverse_softplus, kaiming_plus_std, softplus,
)


def single_neuron_model(nu=0.5):
    layer = AdaptiveLayer(np.array([[1.0, 0.0]]), ImportanceDist(nu), "relu")
    return AwnnModel(1, [layer], np.array([[1.0, 0.0]]), task="regression")


def test_kaiming_plus_examples():
    assert kaiming_plus_std(np.ones(10), "relu") == pytest.approx(math.sqrt(2 / 10))
    assert kaiming_plus_std([0.5], "relu") == pytest.approx(2.828427, abs=1e-6)
    assert kaiming_plus_std(np.ones(4), "tanh") == pytest.approx(0.5)
    assert kaiming_plus_std([0.5, 0.0], "relu") == kaiming_plus_std([0.5], "relu")
    for bad in ([], [0.0, 0.0], [0.5, -0.1]):
        with pytest.raises(ParameterError):
            kaiming_plus_std(bad, "relu")


def test_output_layer_uses_kaiming_plus():
    m = init_model(ModelConfig(2, 3, hidden_layers=1, nu0=0.001, output_init="kaiming_plus"), 0)
    assert m.widths == [2303]
    std = kaiming_plus_std(m.importances(0), "linear")
    assert m.output_weights[:, :-1].std() == pytest.approx(std, rel=0.05)
    for kw in ({"init": "kaiming", "output_init": "kaiming_plus"}, {"output_init": "kaiming"}):
        plain = init_model(ModelConfig(2, 3, hidden_layers=1, nu0=0.001, **kw), 0)
        assert plain.output_weights[:, :-1].std() == pytest.approx(math.sqrt(2 / 2303), rel=0.05)


def test_forward_single_neuron():
    m = single_neuron_model()
    fp = m.forward(np.array([[2.0]]))
    assert fp.alphas[0][0, 0] == 2.0
    # output weight 1, bias 0, so the output is the rescaled activation
    assert fp.output.item() == pytest.approx(0.786939, abs=1e-6)


def test_zero_weights_give_zero_hidden(rng):
    m = init_model(ModelConfig(3, 2, activation="relu", nu0=0.4), 0)
    m.hidden[0].weights[:] = 0.0
    fp = m.forward(rng.normal(size=(4, 3)))
    assert np.all(fp.alphas[0] == 0)
    assert np.array_equal(fp.output.value, np.tile(m.output_weights[:, -1], (4, 1)))


def test_rescale_ratio_is_pmf(rng):
    m = init_model(ModelConfig(2, 2, activation="relu", nu0=0.3), 1)
    x = rng.normal(size=(20, 2))
    h = ad.col_scale(ad.Node(m.forward(x).alphas[0]), ad.Node(m.importances(0)))
    z = m.normalize(x) @ m.hidden[0].weights[:, :-1].T + m.hidden[0].weights[:, -1]
    mask = z > 0
    ratio = h.value[mask] / z[mask]
    cols = np.nonzero(mask)[1]
    assert np.allclose(ratio, pmf(cols + 1, 0.3), rtol=1e-12)


def test_init_widths_and_determinism():
    cfg = ModelConfig(2, 2, hidden_layers=3, nu0=0.5)
    a, b = init_model(cfg, 7), init_model(cfg, 7)
    assert a.widths == [5, 5, 5]
    for la, lb in zip(a.hidden, b.hidden):
        assert np.array_equal(la.weights, lb.weights)
    assert np.array_equal(a.output_weights, b.output_weights)
    assert init_model(ModelConfig(2, 2), 0).widths == [231]


def test_init_rejects_bad_config():
    with pytest.raises(ParameterError):
        init_model(ModelConfig(2, 2, nu0=-1), 0)
    with pytest.raises(ParameterError):
        init_model(ModelConfig(2, 2, k=1.5), 0)


def test_resize_noop_and_round_trip():
    m = init_model(ModelConfig(2, 2, hidden_layers=2, nu0=0.5), 3)
    w0 = [layer.weights.copy() for layer in m.hidden]
    out0 = m.output_weights.copy()
    rng = np.random.default_rng(0)
    m.resize(0, 5, rng)
    assert np.array_equal(m.hidden[0].weights, w0[0])
    m.resize(0, 8, rng)
    m.resize(1, 9, rng)
    m.resize(0, 5)
    m.resize(1, 5)
    for layer, w in zip(m.hidden, w0):
        assert np.array_equal(layer.weights, w)
    assert np.array_equal(m.output_weights, out0)


def test_shrink_drops_trailing_rows_and_columns():
    m = init_model(ModelConfig(2, 2, hidden_layers=2, nu0=0.5), 3)
    w0, w1 = m.hidden[0].weights.copy(), m.hidden[1].weights.copy()
    m.resize(0, 3)
    assert np.array_equal(m.hidden[0].weights, w0[:3])
    assert np.array_equal(m.hidden[1].weights, np.hstack([w1[:, :3], w1[:, -1:]]))
    with pytest.raises(ParameterError):
        m.resize(0, 0)


def test_grow_std_follows_kaiming_plus():
    m = init_model(ModelConfig(2, 2, hidden_layers=2, nu0=0.5), 3)
    m.resize(1, 40005, np.random.default_rng(1))
    new = m.hidden[1].weights[5:]
    assert new[:, :-1].std() == pytest.approx(kaiming_plus_std(m.importances(0)), rel=0.02)
    bound = 1 / np.sqrt(m.widths[0])
    assert np.abs(new[:, -1]).max() <= bound
    assert new[:, -1].std() == pytest.approx(bound / np.sqrt(3), rel=0.02)


def test_init_bias_bounds():
    m = init_model(ModelConfig(3, 2, hidden_layers=2, nu0=0.3), 0)
    fans = [3] + m.widths
    biases = [layer.weights[:, -1] for layer in m.hidden] + [m.output_weights[:, -1]]
    for b, fan in zip(biases, fans):
        assert np.abs(b).max() <= 1 / np.sqrt(fan) and b.any()


def test_unit_importance_is_plain_mlp(rng):
    m = init_model(ModelConfig(3, 4, hidden_layers=2, nu0=0.4, activation="tanh"), 2)
    m.unit_importance = True
    x = rng.normal(size=(6, 3))
    h = x
    for layer in m.hidden:
        h = np.tanh(h @ layer.weights[:, :-1].T + layer.weights[:, -1])
    ref = h @ m.output_weights[:, :-1].T + m.output_weights[:, -1]
    assert np.allclose(m.predict(x), ref, rtol=0, atol=1e-12)


def test_nu_receives_gradient(rng):
    m = init_model(ModelConfig(2, 2, nu0=0.3), 0)
    fp = m.forward(rng.normal(size=(8, 2)))
    ad.softmax_cross_entropy(fp.output, rng.integers(0, 2, 8)).backward()
    assert fp.nus[0].grad[0, 0] != 0.0


def test_soft_ordering_at_init():
    m = init_model(ModelConfig(2, 2, nu0=0.05, activation="relu"), 0)
    x = np.random.default_rng(5).normal(size=(10000, 2))
    mean_h = np.abs(m.forward(x).alphas[0] * m.importances(0)).mean(axis=0)
    j = np.arange(mean_h.size)
    # Spearman rank correlation against the neuron index
    r = np.corrcoef(np.argsort(np.argsort(mean_h)), j)[0, 1]
    assert r < -0.5


@settings(max_examples=50, deadline=None)
@given(st.floats(1e-3, 30))
def test_softplus_inverse(y):
    assert softplus(inverse_softplus(y)) == pytest.approx(y, rel=1e-9)


def test_parameters_round_trip():
    m = init_model(ModelConfig(2, 2, hidden_layers=2, nu0=0.2), 0)
    nus = m.nus
    m.set_parameters(m.parameters())
    assert m.nus == pytest.approx(nus, rel=1e-12)


def test_shape_mismatch_is_rejected():
    with pytest.raises(ad.ShapeError):
        init_model(ModelConfig(2, 2, nu0=0.5), 0).forward(np.ones((3, 5)))
    layer = AdaptiveLayer(np.ones((3, 3)), ImportanceDist(0.5))
    with pytest.raises(ParameterError):
        AwnnModel(2, [layer], np.ones((2, 5)))
