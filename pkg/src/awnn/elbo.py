"""Negative ELBO under the first-order (plug-in) approximation.

Minimization form::

    total = nll - (M / N) * (width_prior + weight_prior)

where ``nll`` is the batch-mean negative log-likelihood, ``width_prior`` sums the
Gaussian log-prior of every layer's rate and ``weight_prior`` sums
``-||w||^2 / (2 sigma_theta^2)`` over the weights of the active neurons.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence, Union

import numpy as np

from . import autodiff as ad
from .importance import ParameterError, log_prior_node

PerLayer = Union[None, float, Sequence[Optional[float]]]


class NumericError(ArithmeticError):
    pass


@dataclass
class ElboConfig:
    """Prior hyper-parameters and data sizes.

    ``None`` for a sigma means an uninformative prior.  Sigmas (and
    ``mu_lambda``) may be given once for all layers or per layer; for
    ``sigma_theta`` the output layer is the last entry.
    """

    dataset_size: Optional[int] = None
    batch_size: Optional[int] = None
    mu_lambda: PerLayer = 0.05
    sigma_lambda: PerLayer = None
    sigma_theta: PerLayer = None

    def validate(self):
        if self.dataset_size is None or self.batch_size is None:
            raise ParameterError("dataset_size and batch_size must be set")
        if self.dataset_size < 1:
            raise ParameterError("dataset_size must be >= 1")
        if not 1 <= self.batch_size <= self.dataset_size:
            raise ParameterError("batch_size must lie in [1, dataset_size]")
        for name in ("sigma_lambda", "sigma_theta"):
            for s in _as_list(getattr(self, name), 1):
                if s is not None and not s > 0:
                    raise ParameterError(f"{name} must be positive when informative")

    def per_layer(self, name: str, n: int) -> list:
        values = _as_list(getattr(self, name), n)
        if len(values) != n:
            raise ParameterError(f"{name} has {len(values)} entries, expected {n}")
        return values


def _as_list(value, n):
    if value is None or np.isscalar(value):
        return [value] * n
    return list(value)


class ElboTerms(NamedTuple):
    width_prior_term: float
    weight_prior_term: float
    predictive_nll: float
    total_loss: float


class ElboGraph(NamedTuple):
    loss: ad.Node
    terms: ElboTerms


def predictive_nll(model, output: ad.Node, targets) -> ad.Node:
    if model.task == "classification":
        return ad.softmax_cross_entropy(output, targets)
    return ad.mse(output, targets)


def elbo_graph(model, fp, targets, config: ElboConfig, batch_size: Optional[int] = None):
    """Build the negative-ELBO node for a forward pass ``fp`` of ``model``.

    ``batch_size`` overrides ``config.batch_size`` for a ragged last batch.
    """
    n_hidden = len(model.hidden)
    m = config.batch_size if batch_size is None else batch_size
    if not 1 <= m <= config.dataset_size:
        raise ParameterError("batch size must lie in [1, dataset_size]")
    ratio = m / config.dataset_size

    nll = predictive_nll(model, fp.output, targets)
    if not np.isfinite(nll.item()):
        raise NumericError("predictive loss is not finite")

    width_terms = []
    mus = config.per_layer("mu_lambda", n_hidden)
    for i, sigma in enumerate(config.per_layer("sigma_lambda", n_hidden)):
        if sigma is None:
            continue
        width_terms.append(log_prior_node(fp.nus[i], mus[i], sigma))

    weight_terms = []
    for i, sigma in enumerate(config.per_layer("sigma_theta", n_hidden + 1)):
        if sigma is None:
            continue
        term = ad.scale(ad.sum_squares(fp.weights[i]), -0.5 / sigma**2)
        if not np.isfinite(term.item()):
            where = "output layer" if i == n_hidden else f"hidden layer {i}"
            raise NumericError(f"weight prior is not finite in {where}")
        weight_terms.append(term)

    loss = nll
    width_value = weight_value = 0.0
    for t in width_terms:
        width_value += t.item()
        loss = ad.add(loss, ad.scale(t, -ratio))
    for t in weight_terms:
        weight_value += t.item()
        loss = ad.add(loss, ad.scale(t, -ratio))
    if not np.isfinite(loss.item()):
        raise NumericError("total loss is not finite")
    terms = ElboTerms(width_value, weight_value, nll.item(), loss.item())
    return ElboGraph(loss, terms)


def elbo(model, x, targets, config: ElboConfig) -> ElboTerms:
    """Evaluate the negative-ELBO terms on a batch without keeping the graph."""
    config.validate()
    fp = model.forward(x)
    return elbo_graph(model, fp, targets, config).terms
