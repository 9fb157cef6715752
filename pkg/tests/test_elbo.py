import numpy as np
import pytest

from awnn.elbo import ElboConfig, NumericError, elbo, elbo_graph
from awnn.importance import ImportanceDist, ParameterError, log_prior_nu
from awnn.model import AdaptiveLayer, AwnnModel, ModelConfig, init_model
from conftest import central_diff, rel_err


def small_model(seed=0, task="classification", rate_param="direct"):
    cfg = ModelConfig(3, 2 if task == "classification" else 1, hidden_layers=2, nu0=0.6,
                      activation="tanh", task=task, rate_param=rate_param)
    return init_model(cfg, seed)


def test_uninformative_total_is_nll(rng):
    m = small_model()
    x, y = rng.normal(size=(10, 3)), rng.integers(0, 2, 10)
    t = elbo(m, x, y, ElboConfig(dataset_size=100, batch_size=10))
    assert t.total_loss == t.predictive_nll
    assert t.width_prior_term == 0.0 and t.weight_prior_term == 0.0


def test_single_weight_prior():
    layer = AdaptiveLayer(np.array([[1.0, 0.0]]), ImportanceDist(0.5), "relu")
    m = AwnnModel(1, [layer], np.array([[0.0, 0.0]]), task="regression")
    cfg = ElboConfig(dataset_size=1, batch_size=1, sigma_theta=[1.0, None])
    t = elbo(m, np.array([[1.0]]), np.array([[0.0]]), cfg)
    assert t.weight_prior_term == pytest.approx(-0.5)
    assert t.total_loss == pytest.approx(t.predictive_nll + 0.5)


def test_doubling_n_halves_regularizer(rng):
    m = small_model()
    x, y = rng.normal(size=(8, 3)), rng.integers(0, 2, 8)
    a = elbo(m, x, y, ElboConfig(100, 8, sigma_lambda=0.1, sigma_theta=1.0))
    b = elbo(m, x, y, ElboConfig(200, 8, sigma_lambda=0.1, sigma_theta=1.0))
    assert (b.total_loss - b.predictive_nll) == pytest.approx(0.5 * (a.total_loss - a.predictive_nll))


def test_terms_invariant(rng):
    m = small_model()
    x, y = rng.normal(size=(8, 3)), rng.integers(0, 2, 8)
    t = elbo(m, x, y, ElboConfig(64, 8, mu_lambda=0.1, sigma_lambda=0.3, sigma_theta=2.0))
    expected = t.predictive_nll - (8 / 64) * (t.width_prior_term + t.weight_prior_term)
    assert t.total_loss == pytest.approx(expected, rel=1e-12)
    assert t.width_prior_term == pytest.approx(sum(log_prior_nu(nu, 0.1, 0.3) for nu in m.nus))


def test_weight_prior_counts_active_weights():
    m = small_model()
    n = sum(layer.weights.size for layer in m.hidden)
    for layer in m.hidden:
        layer.weights[:] = 1.0
    m.output_weights[:] = 0.0
    t = elbo(m, np.zeros((1, 3)), [0], ElboConfig(1, 1, sigma_theta=1.0))
    assert t.weight_prior_term == pytest.approx(-0.5 * n)
    assert n == sum(w * (d + 1) for w, d in zip(m.widths, [3] + m.widths[:-1]))


def test_config_validation():
    with pytest.raises(ParameterError):
        ElboConfig(10, 20).validate()
    with pytest.raises(ParameterError):
        ElboConfig(10, 5, sigma_theta=-1.0).validate()
    with pytest.raises(ParameterError):
        ElboConfig(10, 5, sigma_theta=[1.0]).per_layer("sigma_theta", 3)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_numeric_error_names_layer(rng):
    m = small_model()
    m.hidden[1].weights[0, 0] = 1e200
    with pytest.raises(NumericError, match="hidden layer 1"):
        elbo(m, rng.normal(size=(2, 3)), [0, 1], ElboConfig(10, 2, sigma_theta=1.0))


@pytest.mark.parametrize("task", ["classification", "regression"])
def test_full_gradient_matches_finite_differences(task, rng):
    m = small_model(task=task)
    x = rng.uniform(-2, 2, (6, 3))
    y = rng.integers(0, 2, 6) if task == "classification" else rng.normal(size=(6, 1))
    cfg = ElboConfig(30, 6, mu_lambda=0.2, sigma_lambda=0.5, sigma_theta=1.5)

    def loss():
        return elbo_graph(m, m.forward(x), y, cfg).loss.item()

    fp = m.forward(x)
    elbo_graph(m, fp, y, cfg).loss.backward()
    for i, layer in enumerate(m.hidden):
        assert rel_err(fp.weights[i].grad, central_diff(loss, layer.weights), 1e-6) < 1e-4
        box = np.array([[layer.dist.nu]])

        def loss_nu(layer=layer, box=box):
            layer.dist.nu = box[0, 0]
            return loss()

        num = central_diff(loss_nu, box)
        layer.dist.nu = box[0, 0]
        assert rel_err(fp.nus[i].grad, num, 1e-6) < 1e-4
    assert rel_err(fp.weights[-1].grad, central_diff(loss, m.output_weights), 1e-6) < 1e-4
