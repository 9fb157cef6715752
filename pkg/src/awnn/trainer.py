"""Training loop: width update, forward, negative ELBO, backprop, optimizer step."""

from __future__ import annotations

import csv
import dataclasses
import io
import logging
import time
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from . import autodiff as ad
from .datasets import TabularDataset
from .elbo import ElboConfig, NumericError, elbo_graph
from .importance import ParameterError
from .model import AwnnModel
from .optim import AdamConfig, SGDConfig, make_optimizer

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class AnnealSchedule:
    """Linear annealing of the rate prior's std, switched on at ``start_epoch``."""

    start_epoch: int
    end_epoch: int
    prior_mean: float = 0.05
    sigma_start: float = 1.0
    sigma_end: float = 0.1

    def validate(self):
        if not self.start_epoch < self.end_epoch:
            raise ParameterError("anneal start_epoch must precede end_epoch")
        if not (self.sigma_start > 0 and self.sigma_end > 0):
            raise ParameterError("anneal sigmas must be positive")


def anneal_step(schedule: Optional[AnnealSchedule], epoch: int):
    """Effective ``(mu, sigma)`` of the rate prior at ``epoch``; None if uninformative."""
    if schedule is None or epoch < schedule.start_epoch:
        return None
    frac = min(1.0, (epoch - schedule.start_epoch) / (schedule.end_epoch - schedule.start_epoch))
    sigma = schedule.sigma_start + frac * (schedule.sigma_end - schedule.sigma_start)
    return schedule.prior_mean, sigma


@dataclass
class TrainConfig:
    epochs: int = 500
    batch_size: int = 32
    optimizer: Union[AdamConfig, SGDConfig] = field(default_factory=AdamConfig)
    seed: int = 0
    patience: Optional[int] = None
    elbo: ElboConfig = field(default_factory=ElboConfig)
    anneal: Optional[AnnealSchedule] = None
    width_update_period: int = 1
    adaptive: bool = True

    def validate(self):
        problems = []
        if self.epochs < 0:
            problems.append("epochs must be >= 0")
        if self.batch_size < 1:
            problems.append("batch_size must be >= 1")
        if not self.optimizer.lr > 0:
            problems.append("lr must be > 0")
        if self.patience is not None and not 1 <= self.patience <= max(self.epochs, 1):
            problems.append("patience must lie in [1, epochs]")
        if self.width_update_period < 1:
            problems.append("width_update_period must be >= 1")
        if problems:
            raise ParameterError("; ".join(problems))
        if self.anneal is not None:
            self.anneal.validate()


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_acc: float
    widths: list
    nus: list
    seconds: float


@dataclass
class TrainLog:
    records: list = field(default_factory=list)
    best_epoch: Optional[int] = None

    def __len__(self):
        return len(self.records)

    def header(self) -> list:
        n = len(self.records[0].widths) if self.records else 0
        return (
            ["epoch", "train_loss", "val_loss", "val_acc"]
            + [f"width_l{i + 1}" for i in range(n)]
            + [f"nu_l{i + 1}" for i in range(n)]
            + ["seconds"]
        )

    def rows(self):
        for r in self.records:
            yield (
                [r.epoch, repr(r.train_loss), repr(r.val_loss), repr(r.val_acc)]
                + list(r.widths)
                + [repr(v) for v in r.nus]
                + [f"{r.seconds:.6f}"]
            )

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.header())
        w.writerows(self.rows())
        return buf.getvalue()


def evaluate(model: AwnnModel, data: TabularDataset) -> dict:
    """Accuracy and mean NLL for classification, mean NLL for regression."""
    if len(data) == 0:
        raise ParameterError("cannot evaluate on an empty split")
    out = model.predict(data.features)
    if model.task == "classification":
        nll = -ad.log_softmax(out)[np.arange(len(data)), data.labels].mean()
        acc = float(np.mean(np.argmax(out, axis=1) == data.labels))
        return {"accuracy": acc, "nll": float(nll)}
    diff = out - data.labels.reshape(out.shape)
    return {"nll": float(0.5 * np.sum(diff * diff) / len(data))}


def update_width(model: AwnnModel, optimizer, rng) -> bool:
    """Resize every hidden layer to its current quantile width."""
    changed = False
    n = len(model.hidden)
    for i, target in enumerate(model.target_widths()):
        if target == model.hidden[i].width:
            continue
        model.resize(i, target, rng)
        optimizer.resize_rows(f"hidden.{i}.weight", target)
        nxt = f"hidden.{i + 1}.weight" if i + 1 < n else "output.weight"
        optimizer.resize_inputs(nxt, target)
        changed = True
    return changed


def _selection_key(model, metrics):
    if model.task == "classification":
        return (metrics["accuracy"], -metrics["nll"])
    return (-metrics["nll"],)


def train(model: AwnnModel, train_data: TabularDataset, val_data: TabularDataset,
          config: TrainConfig, step_callback=None, epoch_callback=None):
    """Train ``model`` in place; returns ``(selected_model, TrainLog)``.

    With ``patience`` set the model of the best validation epoch is returned
    (a copy), otherwise the final model.  ``step_callback(step, terms)`` is
    called after every optimizer step, ``epoch_callback(record, model)`` after
    every epoch.
    """
    config.validate()
    log_ = TrainLog()
    if config.epochs == 0:
        return model, log_
    if len(train_data) == 0 or len(val_data) == 0:
        raise ParameterError("train and validation splits must be non-empty")
    if train_data.features.shape[1] != model.input_dim:
        raise ParameterError("model input dimension does not match the data")
    if model.task == "classification" and train_data.n_classes > model.output_dim:
        raise ParameterError("model has fewer outputs than the data has classes")

    n = len(train_data)
    bs = min(config.batch_size, n)
    base_elbo = dataclasses.replace(config.elbo, dataset_size=n, batch_size=bs)
    base_elbo.validate()
    optimizer = make_optimizer(config.optimizer)
    shuffle_rng = np.random.default_rng([config.seed, 0])
    grow_rng = np.random.default_rng([config.seed, 1])
    x, y = train_data.features, train_data.labels

    best_key, best_model, since_best = None, None, 0
    step = 0
    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        prior = anneal_step(config.anneal, epoch)
        elbo_cfg = base_elbo
        if config.anneal is not None:
            mu, sigma = prior if prior is not None else (base_elbo.mu_lambda, None)
            elbo_cfg = dataclasses.replace(base_elbo, mu_lambda=mu, sigma_lambda=sigma)
        perm = shuffle_rng.permutation(n)
        losses = []
        for b, start in enumerate(range(0, n, bs)):
            if config.adaptive and step % config.width_update_period == 0:
                update_width(model, optimizer, grow_rng)
            idx = perm[start:start + bs]
            try:
                fp = model.forward(x[idx])
                graph = elbo_graph(model, fp, y[idx], elbo_cfg, batch_size=len(idx))
            except (NumericError, ValueError) as exc:
                raise TrainingDiverged(f"epoch {epoch}, batch {b}: {exc}") from exc
            graph.loss.backward()
            params = model.parameters()
            grads = model.gradients(fp)
            if model.unit_importance:
                for i in range(len(model.hidden)):
                    del params[f"hidden.{i}.nu"], grads[f"hidden.{i}.nu"]
            optimizer.step(params, grads)
            if model.unit_importance:
                params.update({f"hidden.{i}.nu": np.array([[layer.dist.nu]])
                               for i, layer in enumerate(model.hidden)})
            model.set_parameters(params)
            losses.append(graph.terms.total_loss)
            if step_callback is not None:
                step_callback(step, graph.terms)
            step += 1

        if config.adaptive:
            # epoch ends are width-update points, so records match the quantile
            update_width(model, optimizer, grow_rng)
        metrics = evaluate(model, val_data)
        log_.records.append(EpochRecord(
            epoch=epoch,
            train_loss=float(np.mean(losses)),
            val_loss=metrics["nll"],
            val_acc=metrics.get("accuracy", float("nan")),
            widths=model.widths,
            nus=model.nus,
            seconds=time.perf_counter() - t0,
        ))
        if epoch_callback is not None:
            epoch_callback(log_.records[-1], model)
        if config.patience is not None:
            key = _selection_key(model, metrics)
            if best_key is None or key > best_key:
                best_key, best_model, since_best = key, model.copy(), 0
                log_.best_epoch = epoch
            else:
                since_best += 1
                if since_best >= config.patience:
                    log.info("early stop at epoch %d (best %d)", epoch, log_.best_epoch)
                    break
    if config.patience is not None:
        return best_model, log_
    log_.best_epoch = config.epochs - 1
    return model, log_
