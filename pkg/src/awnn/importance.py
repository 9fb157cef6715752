"""Discretized exponential importance over 1-indexed neurons.

``pmf(j; nu) = F(j) - F(j - 1)`` with the exponential CDF ``F(x) = 1 - exp(-nu x)``,
so ``pmf(j; nu) = exp(-nu (j - 1)) (1 - exp(-nu))``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import Node

NU_MIN = 1e-4


class ParameterError(ValueError):
    pass


def _check_rate(nu):
    if not nu > 0:
        raise ParameterError(f"rate must be positive, got {nu!r}")


def pmf(j, nu):
    """Importance of neuron ``j`` (``j >= 1``); vectorized over ``j``."""
    _check_rate(nu)
    j = np.asarray(j, dtype=np.float64)
    if np.any(j < 1):
        raise ParameterError("neuron indices start at 1")
    out = np.exp(-nu * (j - 1.0)) * -math.expm1(-nu)
    return float(out) if out.ndim == 0 else out


def pmf_grad(j, nu):
    """Derivative of ``pmf(j; nu)`` with respect to ``nu``."""
    _check_rate(nu)
    j = np.asarray(j, dtype=np.float64)
    decay = np.exp(-nu * (j - 1.0))
    out = decay * (math.exp(-nu) + (j - 1.0) * math.expm1(-nu))
    return float(out) if out.ndim == 0 else out


def cmf(d, nu):
    """Total mass of the first ``d`` neurons, ``1 - exp(-nu d)``."""
    _check_rate(nu)
    return -np.expm1(-nu * np.asarray(d, dtype=np.float64))


def truncated_width(nu: float, k: float) -> int:
    """Width ``D = max(1, ceil(-ln(1 - k) / nu))`` at quantile threshold ``k``."""
    _check_rate(nu)
    if not 0.0 < k < 1.0:
        raise ParameterError(f"quantile threshold must lie in (0, 1), got {k!r}")
    return max(1, math.ceil(-math.log1p(-k) / nu))


def log_prior_nu(nu, mu_lambda=None, sigma_lambda=None) -> float:
    """Gaussian log-prior on the rate up to constants; 0 when uninformative.

    Passing ``sigma_lambda=None`` marks the prior as uninformative.
    """
    if sigma_lambda is None:
        return 0.0
    if not sigma_lambda > 0:
        raise ParameterError("sigma_lambda must be positive")
    return -((nu - mu_lambda) ** 2) / (2.0 * sigma_lambda**2)


def importance_node(nu: Node, width: int) -> Node:
    """Tape op producing the 1 x width row ``[pmf(1; nu), ..., pmf(width; nu)]``."""
    rate = nu.item()
    j = np.arange(1, width + 1, dtype=np.float64)
    out = Node(pmf(j, rate).reshape(1, -1), (nu,), "importance")

    def _backward():
        nu.grad[0, 0] += float(np.sum(pmf_grad(j, rate) * out.grad[0]))

    out._backward = _backward
    return out


def log_prior_node(nu: Node, mu_lambda: float, sigma_lambda: float) -> Node:
    value = log_prior_nu(nu.item(), mu_lambda, sigma_lambda)
    out = Node(np.array([[value]]), (nu,), "log_prior_nu")

    def _backward():
        nu.grad[0, 0] -= out.grad[0, 0] * (nu.item() - mu_lambda) / sigma_lambda**2

    out._backward = _backward
    return out


@dataclass
class ImportanceDist:
    nu: float
    k: float = 0.9
    nu_min: float = NU_MIN

    def __post_init__(self):
        _check_rate(self.nu_min)
        if not 0.0 < self.k < 1.0:
            raise ParameterError(f"quantile threshold must lie in (0, 1), got {self.k!r}")
        _check_rate(self.nu)
        self.clamp()

    def clamp(self):
        if not math.isfinite(self.nu):
            raise ParameterError("rate became non-finite")
        if self.nu < self.nu_min:
            self.nu = self.nu_min

    def width(self) -> int:
        return truncated_width(self.nu, self.k)

    def importances(self, width: int) -> np.ndarray:
        return pmf(np.arange(1, width + 1), self.nu)
