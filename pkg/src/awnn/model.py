"""Adaptive-width MLP: importance-rescaled hidden layers and a fixed output layer."""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import autodiff as ad
from .importance import ImportanceDist, ParameterError, importance_node

INIT_SCHEMES = ("kaiming_plus", "kaiming")
NEW_NEURON_INITS = ("kaiming_plus", "standard_normal")
OUTPUT_ACTIVATION = "linear"
OUTPUT_INITS = ("kaiming", "kaiming_plus")
TASKS = ("classification", "regression")
RATE_PARAMS = ("softplus", "direct")


def softplus(x: float) -> float:
    return x + math.log1p(math.exp(-x)) if x > 0 else math.log1p(math.exp(x))


def inverse_softplus(y: float) -> float:
    return y + math.log(-math.expm1(-y))


def sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def kaiming_plus_std(prev_importances, activation: str = "relu") -> float:
    """Weight std keeping activation variance constant under importance rescaling.

    ``sqrt(c / sum(f_j^2))`` over the incoming neurons' importances, with
    ``c = 2`` for the ReLU family and ``c = 1`` for tanh-like activations.
    """
    f = np.asarray(prev_importances, dtype=np.float64).ravel()
    if f.size == 0:
        raise ParameterError("need at least one incoming importance")
    # far-tail importances may underflow to 0, which is fine
    if np.any(f < 0) or not np.any(f > 0):
        raise ParameterError("importances must be non-negative and not all zero")
    gain = 2.0 if activation in ad.RELU_FAMILY else 1.0
    return math.sqrt(gain / float(np.sum(f * f)))


def kaiming_std(fan_in: int) -> float:
    return math.sqrt(2.0 / fan_in)


def resize_rows(w: np.ndarray, rows: int, fill) -> np.ndarray:
    """Keep the first ``rows`` rows of ``w``; new rows come from ``fill(n, cols)``."""
    if rows <= w.shape[0]:
        return w[:rows].copy()
    extra = fill(rows - w.shape[0], w.shape[1])
    return np.vstack([w, extra])


def resize_inputs(w: np.ndarray, n_in: int, fill) -> np.ndarray:
    """Keep the first ``n_in`` input columns and the trailing bias column."""
    old_in = w.shape[1] - 1
    if n_in <= old_in:
        return np.ascontiguousarray(np.hstack([w[:, :n_in], w[:, -1:]]))
    extra = fill(w.shape[0], n_in - old_in)
    return np.ascontiguousarray(np.hstack([w[:, :old_in], extra, w[:, -1:]]))


def zeros_fill(r, c):
    return np.zeros((r, c))


@dataclass
class ModelConfig:
    input_dim: int
    output_dim: int
    hidden_layers: int = 1
    nu0: float = 0.01
    k: float = 0.9
    nu_min: float = 1e-4
    activation: str = "relu6"
    leaky_slope: float = ad.DEFAULT_LEAKY_SLOPE
    task: str = "classification"
    init: str = "kaiming_plus"
    new_neuron_init: str = "kaiming_plus"
    rate_param: str = "softplus"
    output_init: str = "kaiming_plus"

    def validate(self):
        problems = []
        if self.input_dim < 1:
            problems.append("input_dim must be >= 1")
        if self.output_dim < 1:
            problems.append("output_dim must be >= 1")
        if self.hidden_layers < 1:
            problems.append("hidden_layers must be >= 1")
        if not self.nu0 > 0:
            problems.append("nu0 must be > 0")
        if not 0 < self.k < 1:
            problems.append("k must lie in (0, 1)")
        if not self.nu_min > 0:
            problems.append("nu_min must be > 0")
        if self.activation not in ad.ACTIVATIONS:
            problems.append(f"activation must be one of {ad.ACTIVATIONS}")
        if self.task not in TASKS:
            problems.append(f"task must be one of {TASKS}")
        if self.init not in INIT_SCHEMES:
            problems.append(f"init must be one of {INIT_SCHEMES}")
        if self.new_neuron_init not in NEW_NEURON_INITS:
            problems.append(f"new_neuron_init must be one of {NEW_NEURON_INITS}")
        if self.rate_param not in RATE_PARAMS:
            problems.append(f"rate_param must be one of {RATE_PARAMS}")
        if self.output_init not in OUTPUT_INITS:
            problems.append(f"output_init must be one of {OUTPUT_INITS}")
        if problems:
            raise ParameterError("; ".join(problems))


@dataclass
class AdaptiveLayer:
    weights: np.ndarray  # width x (inputs + 1), bias last
    dist: ImportanceDist
    activation: str = "relu6"
    leaky_slope: float = ad.DEFAULT_LEAKY_SLOPE

    @property
    def width(self) -> int:
        return self.weights.shape[0]

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1] - 1


class ForwardPass(NamedTuple):
    output: ad.Node
    weights: list  # hidden weight nodes then the output weight node
    nus: list
    alphas: list  # post-activation, pre-rescale values per hidden layer


@dataclass
class AwnnModel:
    input_dim: int
    hidden: list
    output_weights: np.ndarray
    task: str = "classification"
    input_shift: np.ndarray = None
    input_scale: np.ndarray = None
    unit_importance: bool = False
    new_neuron_init: str = "kaiming_plus"
    rate_param: str = "softplus"
    output_init: str = "kaiming_plus"
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.input_shift is None:
            self.input_shift = np.zeros(self.input_dim)
        if self.input_scale is None:
            self.input_scale = np.ones(self.input_dim)
        self.check()

    @property
    def output_dim(self) -> int:
        return self.output_weights.shape[0]

    @property
    def widths(self) -> list:
        return [layer.width for layer in self.hidden]

    @property
    def nus(self) -> list:
        return [layer.dist.nu for layer in self.hidden]

    @property
    def total_width(self) -> int:
        return sum(self.widths)

    def copy(self) -> "AwnnModel":
        return copy.deepcopy(self)

    def check(self):
        prev = self.input_dim
        for i, layer in enumerate(self.hidden):
            if layer.in_dim != prev:
                raise ParameterError(
                    f"hidden layer {i} expects {layer.in_dim} inputs, previous width is {prev}"
                )
            if layer.width < 1:
                raise ParameterError(f"hidden layer {i} has no neurons")
            prev = layer.width
        if self.output_weights.shape[1] != prev + 1:
            raise ParameterError(
                f"output layer expects {self.output_weights.shape[1] - 1} inputs, "
                f"last hidden width is {prev}"
            )

    def importances(self, i: int) -> np.ndarray:
        layer = self.hidden[i]
        if self.unit_importance:
            return np.ones(layer.width)
        return layer.dist.importances(layer.width)

    def input_importances(self, i: int) -> np.ndarray:
        return np.ones(self.input_dim) if i == 0 else self.importances(i - 1)

    def normalize(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = x.reshape(1, -1)
        if x.shape[1] != self.input_dim:
            raise ad.ShapeError(f"expected {self.input_dim} input features, got {x.shape[1]}")
        return (x - self.input_shift) / self.input_scale

    def forward(self, x) -> ForwardPass:
        h = ad.Node(self.normalize(x))
        weights, nus, alphas = [], [], []
        for layer in self.hidden:
            w = ad.Node(layer.weights)
            nu = ad.Node(np.array([[layer.dist.nu]]))
            alpha = ad.elementwise(layer.activation, ad.affine(h, w), layer.leaky_slope)
            if self.unit_importance:
                h = alpha
            else:
                h = ad.col_scale(alpha, importance_node(nu, layer.width))
            weights.append(w)
            nus.append(nu)
            alphas.append(alpha.value)
        w_out = ad.Node(self.output_weights)
        weights.append(w_out)
        return ForwardPass(ad.affine(h, w_out), weights, nus, alphas)

    def predict(self, x) -> np.ndarray:
        return self.forward(x).output.value

    # -- parameters ---------------------------------------------------------
    # The optimizer sees each rate either directly or through softplus(raw).

    def parameter_names(self) -> list:
        names = []
        for i in range(len(self.hidden)):
            names += [f"hidden.{i}.weight", f"hidden.{i}.nu"]
        return names + ["output.weight"]

    def parameters(self) -> dict:
        params = {}
        for i, layer in enumerate(self.hidden):
            params[f"hidden.{i}.weight"] = layer.weights
            nu = layer.dist.nu
            raw = inverse_softplus(nu) if self.rate_param == "softplus" else nu
            params[f"hidden.{i}.nu"] = np.array([[raw]])
        params["output.weight"] = self.output_weights
        return params

    def gradients(self, fp: ForwardPass) -> dict:
        grads = {}
        for i in range(len(self.hidden)):
            grads[f"hidden.{i}.weight"] = fp.weights[i].grad
            g = fp.nus[i].grad
            if self.rate_param == "softplus":
                g = g * sigmoid(inverse_softplus(self.hidden[i].dist.nu))
            grads[f"hidden.{i}.nu"] = g
        grads["output.weight"] = fp.weights[-1].grad
        return grads

    def set_parameters(self, params: dict):
        for i, layer in enumerate(self.hidden):
            layer.weights = params[f"hidden.{i}.weight"]
            raw = float(params[f"hidden.{i}.nu"][0, 0])
            layer.dist.nu = softplus(raw) if self.rate_param == "softplus" else raw
            layer.dist.clamp()
        self.output_weights = params["output.weight"]

    # -- width changes ------------------------------------------------------

    def _new_weights(self, rng, std):
        if self.new_neuron_init == "standard_normal":
            std = 1.0
        return lambda r, c: rng.normal(0.0, std, size=(r, c))

    def _new_rows(self, rng, std):
        draw = self._new_weights(rng, std)
        if self.new_neuron_init == "standard_normal":
            return draw

        def fill(r, c):
            w = draw(r, c)
            w[:, -1] = init_bias(rng, r, c - 1)
            return w

        return fill

    def _output_std(self, i):
        if self.output_init == "kaiming_plus":
            return kaiming_plus_std(self.importances(i), OUTPUT_ACTIVATION)
        return kaiming_std(self.hidden[i].width)

    def resize(self, i: int, new_width: int, rng=None):
        """Grow or shrink hidden layer ``i`` and the next layer's input columns."""
        if new_width < 1:
            raise ParameterError("width must be at least 1")
        layer = self.hidden[i]
        if new_width == layer.width:
            return
        if new_width > layer.width and rng is None:
            raise ParameterError("growing a layer needs a random generator")
        row_std = kaiming_plus_std(self.input_importances(i), layer.activation)
        layer.weights = resize_rows(layer.weights, new_width, self._new_rows(rng, row_std))
        if i + 1 < len(self.hidden):
            nxt = self.hidden[i + 1]
            col_std = kaiming_plus_std(self.importances(i), nxt.activation)
            nxt.weights = resize_inputs(nxt.weights, new_width, self._new_weights(rng, col_std))
        else:
            col_std = self._output_std(i)
            self.output_weights = resize_inputs(
                self.output_weights, new_width, self._new_weights(rng, col_std)
            )

    def target_widths(self) -> list:
        return [layer.dist.width() for layer in self.hidden]


def init_bias(rng, n: int, fan_in: int) -> np.ndarray:
    """Uniform in +-1/sqrt(fan_in), the usual dense-layer default."""
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=n)


def init_model(config: ModelConfig, seed: int) -> AwnnModel:
    config.validate()
    rng = np.random.default_rng(seed)
    hidden = []
    prev_importance = np.ones(config.input_dim)
    for _ in range(config.hidden_layers):
        dist = ImportanceDist(config.nu0, config.k, config.nu_min)
        width = dist.width()
        if config.init == "kaiming_plus":
            std = kaiming_plus_std(prev_importance, config.activation)
        else:
            std = kaiming_std(prev_importance.size)
        w = rng.normal(0.0, std, size=(width, prev_importance.size + 1))
        # the variance argument covers weights only; biases stay small
        w[:, -1] = init_bias(rng, width, prev_importance.size)
        hidden.append(AdaptiveLayer(w, dist, config.activation, config.leaky_slope))
        prev_importance = dist.importances(width)
    # the output layer also sees rescaled activations; it is linear, so gain 1
    if config.output_init == "kaiming_plus" and config.init == "kaiming_plus":
        out_std = kaiming_plus_std(prev_importance, OUTPUT_ACTIVATION)
    else:
        out_std = kaiming_std(prev_importance.size)
    w_out = rng.normal(0.0, out_std, size=(config.output_dim, prev_importance.size + 1))
    w_out[:, -1] = init_bias(rng, config.output_dim, prev_importance.size)
    return AwnnModel(
        config.input_dim,
        hidden,
        w_out,
        task=config.task,
        new_neuron_init=config.new_neuron_init,
        output_init=config.output_init,
        rate_param=config.rate_param,
    )
