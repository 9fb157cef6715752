"""Experiment configs, content-addressed run directories and multi-seed runs."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import List, Literal, Optional, Tuple, Union

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from . import checkpoint, datasets
from .elbo import ElboConfig
from .model import ModelConfig, init_model
from .optim import AdamConfig, SGDConfig
from .trainer import AnnealSchedule, TrainConfig, evaluate, train

log = logging.getLogger(__name__)

PerLayer = Union[None, float, List[Optional[float]]]


class ConfigError(ValueError):
    pass


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class DatasetSection(_Strict):
    name: Literal["double_moon", "spiral", "spiral_hard"] = "double_moon"
    n_samples: Optional[int] = Field(None, ge=2)
    noise: float = Field(datasets.DEFAULT_NOISE, ge=0)
    seed: int = 0
    fractions: Tuple[float, float, float] = datasets.DEFAULT_FRACTIONS
    stratified: bool = True

    @model_validator(mode="after")
    def _fractions(self):
        if abs(sum(self.fractions) - 1.0) > 1e-9 or min(self.fractions) < 0:
            raise ValueError("fractions must be non-negative and sum to 1")
        return self


class ModelSection(_Strict):
    hidden_layers: int = Field(1, ge=1)
    nu0: float = Field(0.01, gt=0)
    k: float = Field(0.9, gt=0, lt=1)
    nu_min: float = Field(1e-4, gt=0)
    activation: Literal["relu", "relu6", "leaky_relu", "tanh"] = "relu6"
    leaky_slope: float = 0.01
    init: Literal["kaiming_plus", "kaiming"] = "kaiming_plus"
    new_neuron_init: Literal["kaiming_plus", "standard_normal"] = "kaiming_plus"
    rate_param: Literal["softplus", "direct"] = "softplus"
    output_init: Literal["kaiming", "kaiming_plus"] = "kaiming_plus"


class OptimizerSection(_Strict):
    kind: Literal["adam", "sgd"] = "adam"
    lr: float = Field(0.01, gt=0)
    betas: Tuple[float, float] = (0.9, 0.999)
    eps: float = Field(1e-8, gt=0)
    momentum: float = Field(0.0, ge=0)
    weight_decay: float = Field(0.0, ge=0)


class AnnealSection(_Strict):
    start_epoch: int = Field(..., ge=0)
    end_epoch: int = Field(..., ge=1)
    prior_mean: float = Field(0.05, gt=0)
    sigma_start: float = Field(1.0, gt=0)
    sigma_end: float = Field(0.1, gt=0)

    @model_validator(mode="after")
    def _order(self):
        if self.start_epoch >= self.end_epoch:
            raise ValueError("start_epoch must precede end_epoch")
        return self


class ElboSection(_Strict):
    mu_lambda: PerLayer = 0.05
    sigma_lambda: PerLayer = None
    sigma_theta: PerLayer = None


class TrainSection(_Strict):
    epochs: int = Field(500, ge=1)
    batch_size: int = Field(32, ge=1)
    seed: int = 0
    patience: Optional[int] = Field(None, ge=1)
    width_update_period: int = Field(1, ge=1)
    adaptive: bool = True
    optimizer: OptimizerSection = OptimizerSection()

    @model_validator(mode="after")
    def _patience(self):
        if self.patience is not None and self.patience > self.epochs:
            raise ValueError("patience must not exceed epochs")
        return self


class ExperimentConfig(_Strict):
    dataset: DatasetSection = DatasetSection()
    model: ModelSection = ModelSection()
    train: TrainSection = TrainSection()
    elbo: ElboSection = ElboSection()
    anneal: Optional[AnnealSection] = None
    out: str = "runs"

    def config_hash(self) -> str:
        """Hash of everything that shapes a run except the seed and output dir."""
        doc = self.model_dump(mode="json", exclude={"out": True, "train": {"seed"}})
        text = json.dumps(doc, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()[:12]

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.model_dump(mode="json"), sort_keys=True)


# Per-task defaults of the tabular grid.
PRESETS = {
    "double_moon": {"train": {"epochs": 500, "batch_size": 32}, "model": {"hidden_layers": 1}},
    "spiral": {"train": {"epochs": 1000, "batch_size": 128}, "model": {"hidden_layers": 1}},
    "spiral_hard": {"train": {"epochs": 5000, "batch_size": 128}, "model": {"hidden_layers": 2}},
}


def _merge(base: dict, over: dict) -> dict:
    out = dict(base)
    for key, value in over.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


def _describe(exc: ValidationError) -> str:
    lines = []
    for err in exc.errors():
        where = ".".join(str(p) for p in err["loc"]) or "<root>"
        msg = "unknown key" if err["type"] == "extra_forbidden" else err["msg"]
        lines.append(f"  {where}: {msg}")
    return "invalid config:\n" + "\n".join(lines)


def build_config(doc: dict = None, overrides: dict = None) -> ExperimentConfig:
    """Validate a config document; the dataset preset fills unset fields."""
    doc = _merge(doc or {}, overrides or {})
    name = (doc.get("dataset") or {}).get("name", "double_moon")
    full = _merge(PRESETS.get(name, {}), doc)
    try:
        return ExperimentConfig.model_validate(full)
    except ValidationError as exc:
        raise ConfigError(_describe(exc)) from None


def load_config(path, overrides: dict = None) -> ExperimentConfig:
    try:
        doc = yaml.safe_load(Path(path).read_text()) or {}
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return build_config(doc, overrides)


def preset(name: str, **sections) -> ExperimentConfig:
    return build_config({"dataset": {"name": name}, **sections})


# -- conversion to library objects -------------------------------------------


def model_config(cfg: ExperimentConfig, n_classes: int = 2, input_dim: int = 2) -> ModelConfig:
    return ModelConfig(input_dim=input_dim, output_dim=n_classes, **cfg.model.model_dump())


def train_config(cfg: ExperimentConfig) -> TrainConfig:
    t = cfg.train
    o = t.optimizer
    if o.kind == "adam":
        opt = AdamConfig(lr=o.lr, betas=tuple(o.betas), eps=o.eps)
    else:
        opt = SGDConfig(lr=o.lr, momentum=o.momentum, weight_decay=o.weight_decay)
    anneal = AnnealSchedule(**cfg.anneal.model_dump()) if cfg.anneal else None
    return TrainConfig(
        epochs=t.epochs,
        batch_size=t.batch_size,
        optimizer=opt,
        seed=t.seed,
        patience=t.patience,
        elbo=ElboConfig(**cfg.elbo.model_dump()),
        anneal=anneal,
        width_update_period=t.width_update_period,
        adaptive=t.adaptive,
    )


def load_splits(cfg: ExperimentConfig):
    d = cfg.dataset
    data = datasets.generate(d.name, d.n_samples, d.noise, d.seed)
    spec = datasets.split(data, d.fractions, d.stratified, d.seed)
    return data.subset(spec.train), data.subset(spec.val), data.subset(spec.test)


# -- runs ---------------------------------------------------------------------


def run_dir(cfg: ExperimentConfig) -> Path:
    return Path(cfg.out) / f"{cfg.config_hash()}-seed{cfg.train.seed}"


def run_once(cfg: ExperimentConfig, splits=None, epoch_callback=None) -> dict:
    """Train one seed, write its run directory and return the summary."""
    out = run_dir(cfg)
    out.mkdir(parents=True, exist_ok=True)
    tr, va, te = splits if splits is not None else load_splits(cfg)
    model = init_model(model_config(cfg, max(tr.n_classes, 2), tr.features.shape[1]),
                       cfg.train.seed)
    model.input_shift, model.input_scale = datasets.standardization(tr.features)
    t0 = time.perf_counter()
    best, tlog = train(model, tr, va, train_config(cfg), epoch_callback=epoch_callback)
    seconds = time.perf_counter() - t0
    test = evaluate(best, te)
    val = evaluate(best, va)
    meta = {"seed": cfg.train.seed, "config_hash": cfg.config_hash(), "epoch": tlog.best_epoch}
    checkpoint.save(best, out / "model.ckpt", meta)
    (out / "trainlog.csv").write_text(tlog.to_csv())
    (out / "config.yaml").write_text(cfg.to_yaml())
    summary = {
        "config_hash": cfg.config_hash(),
        "seed": cfg.train.seed,
        "dataset": cfg.dataset.name,
        "test_accuracy": test.get("accuracy"),
        "test_nll": test["nll"],
        "val_accuracy": val.get("accuracy"),
        "widths": best.widths,
        "total_width": best.total_width,
        "nus": best.nus,
        "best_epoch": tlog.best_epoch,
        "epochs_run": len(tlog),
        "seconds": seconds,
        "run_dir": str(out),
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


def _worker(args):
    doc, seed = args
    cfg = ExperimentConfig.model_validate(doc)
    cfg.train.seed = seed
    try:
        return run_once(cfg)
    except Exception as exc:  # reported in the aggregate, never swallowed silently
        log.error("seed %d failed: %s", seed, exc)
        return {"seed": seed, "error": f"{type(exc).__name__}: {exc}",
                "traceback": traceback.format_exc()}


def num_workers(n_jobs: int) -> int:
    raw = os.environ.get("AWNN_NUM_WORKERS")
    try:
        cap = int(raw) if raw else 1
    except ValueError:
        raise ConfigError(f"AWNN_NUM_WORKERS must be an integer, got {raw!r}") from None
    return max(1, min(cap, n_jobs))


def _stats(values):
    if not values:
        return {"mean": None, "std": None}
    a = np.asarray(values, dtype=np.float64)
    return {"mean": float(a.mean()), "std": float(a.std())}


def aggregate(summaries: list) -> dict:
    ok = [s for s in summaries if "error" not in s]
    acc = [s["test_accuracy"] for s in ok if s.get("test_accuracy") is not None]
    return {
        "n_runs": len(summaries),
        "n_ok": len(ok),
        "failures": [{"seed": s["seed"], "error": s["error"]} for s in summaries if "error" in s],
        "test_accuracy": _stats(acc),
        "total_width": _stats([s["total_width"] for s in ok]),
        "runs": sorted(summaries, key=lambda s: s["seed"]),
    }


def run_seeds(cfg: ExperimentConfig, seeds) -> dict:
    """Run every seed (in parallel up to ``AWNN_NUM_WORKERS``) and aggregate."""
    seeds = list(seeds)
    doc = cfg.model_dump(mode="json")
    jobs = [(doc, s) for s in seeds]
    workers = num_workers(len(jobs))
    if workers == 1:
        summaries = [_worker(j) for j in jobs]
    else:
        with ProcessPoolExecutor(workers) as pool:
            summaries = list(pool.map(_worker, jobs))
    agg = aggregate(summaries)
    agg["config_hash"] = cfg.config_hash()
    agg["seeds"] = seeds
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{cfg.config_hash()}-aggregate.json").write_text(
        json.dumps(agg, indent=2, sort_keys=True) + "\n")
    return agg


# Tabular reference values: accuracy mean (std), total width mean (std).
TABLE1_REFERENCE = {
    "double_moon": (100.0, 0.0, 8.1, 2.8),
    "spiral": (99.8, 0.1, 65.9, 8.7),
    "spiral_hard": (100.0, 0.0, 227.4, 32.4),
}


def repro_table1(out, seeds=range(10), names=("double_moon", "spiral", "spiral_hard")) -> dict:
    """Multi-seed runs of every tabular task; writes table1.csv and table1.md."""
    out = Path(out)
    rows = {}
    for name in names:
        cfg = preset(name, out=str(out / name))
        try:
            rows[name] = run_seeds(cfg, seeds)
        except Exception as exc:
            rows[name] = {"n_runs": 0, "n_ok": 0, "failures": [{"seed": None, "error": str(exc)}],
                          "test_accuracy": _stats([]), "total_width": _stats([])}
    header = ["dataset", "acc_mean", "acc_std", "width_mean", "width_std", "n_ok",
              "ref_acc_mean", "ref_acc_std", "ref_width_mean", "ref_width_std"]
    csv_lines = [",".join(header)]
    md = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    for name, agg in rows.items():
        acc, width = agg["test_accuracy"], agg["total_width"]
        cells = [
            name,
            _fmt(acc["mean"], 100), _fmt(acc["std"], 100),
            _fmt(width["mean"]), _fmt(width["std"]),
            str(agg["n_ok"]),
            *[str(v) for v in TABLE1_REFERENCE[name]],
        ]
        csv_lines.append(",".join(cells))
        md.append("| " + " | ".join(cells) + " |")
    out.mkdir(parents=True, exist_ok=True)
    (out / "table1.csv").write_text("\n".join(csv_lines) + "\n")
    (out / "table1.md").write_text("\n".join(md) + "\n")
    return rows


def _fmt(value, factor=1.0):
    return "" if value is None else f"{value * factor:.2f}"


def ablation(cfg: ExperimentConfig, batch_sizes=(32, 128), nu0s=(0.01, 0.05), seeds=(0,)) -> list:
    """Train every (batch size, starting rate) pair of a small grid.

    Returns one row per run; the width trajectories are in each run's trainlog.
    """
    rows = []
    for b in batch_sizes:
        for nu0 in nu0s:
            doc = cfg.model_dump(mode="json")
            doc["train"]["batch_size"] = int(b)
            doc["model"]["nu0"] = float(nu0)
            agg = run_seeds(ExperimentConfig.model_validate(doc), seeds)
            for run in agg["runs"]:
                rows.append({
                    "batch_size": int(b), "nu0": float(nu0), "seed": run["seed"],
                    "test_accuracy": run.get("test_accuracy"),
                    "total_width": run.get("total_width"),
                    "run_dir": run.get("run_dir", ""), "error": run.get("error", ""),
                })
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    keys = list(rows[0]) if rows else []
    lines = [",".join(keys)] + [",".join("" if r[k] is None else str(r[k]) for k in keys) for r in rows]
    (out / "ablation.csv").write_text("\n".join(lines) + "\n")
    return rows
