"""Post-hoc truncation of trained models and truncation sweeps."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .importance import ParameterError
from .model import AwnnModel

STRATEGIES = ("ordered", "random", "magnitude")


def mean_activations(model: AwnnModel, x, rescaled: bool = False) -> list:
    """Per-layer mean |activation| of every neuron over the rows of ``x``.

    ``rescaled=False`` gives the activation before the importance factor.
    """
    fp = model.forward(x)
    out = []
    for i, alpha in enumerate(fp.alphas):
        a = np.abs(alpha)
        if rescaled and not model.unit_importance:
            a = a * model.importances(i)
        out.append(a.mean(axis=0))
    return out


def keep_counts(model: AwnnModel, fraction: float) -> list:
    """Neurons kept per layer when removing ``fraction`` of every hidden layer."""
    if not 0.0 <= fraction <= 1.0:
        raise ParameterError("fraction must lie in [0, 1]")
    return [max(1, int(round(w * (1.0 - fraction)))) for w in model.widths]


def _select(model, i, keep, strategy, rng_order, magnitudes):
    if strategy == "ordered":
        return np.arange(keep)
    if strategy == "random":
        return np.sort(rng_order[i][:keep])
    order = np.argsort(-magnitudes[i], kind="stable")
    return np.sort(order[:keep])


def _take_inputs(w, idx, ratio):
    return np.ascontiguousarray(np.hstack([w[:, idx] * ratio, w[:, -1:]]))


def truncate(model: AwnnModel, keep, strategy: str = "ordered", calibration=None, seed: int = 0,
             _cache=None) -> AwnnModel:
    """Return a copy of ``model`` keeping ``keep[i]`` neurons of hidden layer ``i``.

    ``ordered`` keeps the leading neurons.  ``random`` keeps a seeded subset
    (subsets are nested across keep counts for one seed) and ``magnitude``
    keeps the neurons with the largest mean |pre-rescale activation| over
    ``calibration`` features.  Kept neurons move to the front; for the baseline
    strategies the next layer's columns absorb the change of importance so the
    retained neurons contribute exactly as before.
    """
    if strategy not in STRATEGIES:
        raise ParameterError(f"unknown strategy {strategy!r}")
    keep = list(keep)
    if len(keep) != len(model.hidden):
        raise ParameterError("need one keep count per hidden layer")
    for i, (k, w) in enumerate(zip(keep, model.widths)):
        if not 1 <= k <= w:
            raise ParameterError(f"layer {i}: keep {k} outside [1, {w}]")

    cache = _cache if _cache is not None else {}
    if strategy == "magnitude" and "magnitudes" not in cache:
        if calibration is None:
            raise ParameterError("magnitude truncation needs calibration features")
        cache["magnitudes"] = mean_activations(model, calibration)
    if strategy == "random" and "order" not in cache:
        rng = np.random.default_rng(seed)
        cache["order"] = [rng.permutation(w) for w in model.widths]

    # C order throughout: BLAS rounding depends on memory layout
    new = model.copy()
    for i, k in enumerate(keep):
        idx = _select(model, i, k, strategy, cache.get("order"), cache.get("magnitudes"))
        old_f = new.importances(i)
        new.hidden[i].weights = new.hidden[i].weights[idx]
        # ordered keeps a prefix, so the ratio is exactly 1 there
        ratio = old_f[idx] / new.importances(i)
        if i + 1 < len(new.hidden):
            new.hidden[i + 1].weights = _take_inputs(new.hidden[i + 1].weights, idx, ratio)
        else:
            new.output_weights = _take_inputs(new.output_weights, idx, ratio)
    new.check()
    return new


@dataclass
class TruncationPoint:
    fraction: float
    width: int
    accuracy: float


@dataclass
class TruncationReport:
    strategy: str
    points: list = field(default_factory=list)
    activation_profile: list = field(default_factory=list)


def _accuracy(model, data):
    return float(np.mean(np.argmax(model.predict(data.features), axis=1) == data.labels))


def sweep(model: AwnnModel, data, fractions, strategies=STRATEGIES, calibration=None, seed=0):
    """Accuracy of truncated copies of ``model`` for every (strategy, fraction)."""
    fractions = [float(f) for f in fractions]
    if any(b < a for a, b in zip(fractions, fractions[1:])):
        raise ParameterError("fractions must be sorted ascending")
    if any(not 0.0 <= f < 1.0 for f in fractions):
        raise ParameterError("fractions must lie in [0, 1)")
    profile = [p.tolist() for p in mean_activations(model, data.features, rescaled=True)]
    calibration = data.features if calibration is None else calibration
    reports = []
    for strategy in strategies:
        report = TruncationReport(strategy, activation_profile=profile)
        cache = {}
        for f in fractions:
            keep = keep_counts(model, f)
            if f == 0.0:
                truncated = model
            else:
                truncated = truncate(model, keep, strategy, calibration, seed, _cache=cache)
            report.points.append(TruncationPoint(f, sum(keep), _accuracy(truncated, data)))
        reports.append(report)
    return reports


def reports_to_csv(reports) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["strategy", "fraction", "width", "accuracy"])
    for r in reports:
        for p in r.points:
            w.writerow([r.strategy, repr(p.fraction), p.width, repr(p.accuracy)])
    return buf.getvalue()
