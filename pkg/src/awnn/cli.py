"""``awnn`` command line.

Exit codes: 0 success, 1 usage or config error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import yaml

from . import checkpoint, compression, datasets, experiment
from .importance import ParameterError
from .trainer import evaluate

USAGE_ERROR = 1
RUNTIME_ERROR = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(USAGE_ERROR, f"{self.prog}: error: {message}\n")


def _parse_set(items) -> dict:
    """``a.b=value`` pairs to a nested dict; values are parsed as YAML scalars."""
    doc = {}
    for item in items or []:
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise UsageError(f"--set expects key.path=value, got {item!r}")
        node = doc
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = yaml.safe_load(raw)
    return doc


def _overrides(args) -> dict:
    doc = _parse_set(args.set)
    flags = {
        ("dataset", "name"): args.dataset,
        ("train", "epochs"): args.epochs,
        ("train", "batch_size"): args.batch_size,
        ("train", "patience"): args.patience,
        ("train", "seed"): args.seed,
        ("model", "hidden_layers"): args.hidden_layers,
        ("model", "activation"): args.activation,
        ("model", "nu0"): args.nu0,
        ("out",): args.out,
    }
    for path, value in flags.items():
        if value is None:
            continue
        node = doc
        for part in path[:-1]:
            node = node.setdefault(part, {})
        node[path[-1]] = value
    if args.lr is not None:
        doc.setdefault("train", {}).setdefault("optimizer", {})["lr"] = args.lr
    return doc


def _load_data(path, split_path=None, part=None):
    data = datasets.read_csv(path)
    if part is None:
        return data
    if split_path is None:
        raise UsageError("--part needs --split")
    spec = datasets.read_split(split_path)
    return data.subset(getattr(spec, part))


# -- commands -----------------------------------------------------------------


def cmd_gen_data(args):
    data = datasets.generate(args.dataset, args.n, args.noise, args.seed)
    spec = datasets.split(data, datasets.DEFAULT_FRACTIONS, True, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stem = f"{args.dataset}-seed{args.seed}"
    datasets.write_csv(data, out / f"{stem}.csv")
    datasets.write_split(spec, out / f"{stem}.split.json")
    print(json.dumps({
        "csv": str(out / f"{stem}.csv"),
        "split": str(out / f"{stem}.split.json"),
        "sizes": [len(spec.train), len(spec.val), len(spec.test)],
    }))


def cmd_train(args):
    over = _overrides(args)
    if args.config:
        cfg = experiment.load_config(args.config, over)
    else:
        cfg = experiment.build_config(over)
    if args.seeds:
        base = cfg.train.seed
        agg = experiment.run_seeds(cfg, range(base, base + args.seeds))
        print(json.dumps({k: agg[k] for k in ("config_hash", "n_ok", "test_accuracy", "total_width")}))
        return 0 if agg["n_ok"] == agg["n_runs"] else RUNTIME_ERROR
    summary = experiment.run_once(cfg)
    print(json.dumps(summary, sort_keys=True))
    return 0


def cmd_eval(args):
    model = checkpoint.load(args.checkpoint)
    data = _load_data(args.data, args.split, args.part)
    print(json.dumps(evaluate(model, data), sort_keys=True))


def cmd_truncate(args):
    model = checkpoint.load(args.checkpoint)
    calibration = _load_data(args.data, args.split, args.part).features if args.data else None
    keep = compression.keep_counts(model, args.fraction)
    new = compression.truncate(model, keep, args.strategy, calibration, args.seed)
    header = checkpoint.read_header(args.checkpoint)
    meta = dict(header.get("metadata", {}))
    meta.update(truncated_from=str(args.checkpoint), fraction=args.fraction, strategy=args.strategy)
    checkpoint.save(new, args.out, meta)
    print(json.dumps({"out": str(args.out), "widths": new.widths}))


def cmd_sweep(args):
    model = checkpoint.load(args.checkpoint)
    data = _load_data(args.data, args.split, args.part)
    calibration = _load_data(args.data, args.split, args.calibration_part).features \
        if args.calibration_part else None
    fractions = [float(f) for f in args.fractions.split(",")]
    strategies = args.strategies.split(",")
    for s in strategies:
        if s not in compression.STRATEGIES:
            raise UsageError(f"unknown strategy {s!r}")
    reports = compression.sweep(model, data, fractions, strategies, calibration, args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(compression.reports_to_csv(reports))
    profile = out.with_suffix(".profile.json")
    profile.write_text(json.dumps({"activation_profile": reports[0].activation_profile}) + "\n")
    print(json.dumps({"csv": str(out), "profile": str(profile)}))


def cmd_repro(args):
    rows = experiment.repro_table1(args.out, range(args.seeds))
    print((Path(args.out) / "table1.md").read_text(), end="")
    failed = sum(len(r["failures"]) for r in rows.values())
    return RUNTIME_ERROR if failed else 0


def cmd_ablate(args):
    cfg = experiment.build_config(_overrides(args))
    batch_sizes = [int(b) for b in args.batch_sizes.split(",")]
    nu0s = [float(v) for v in args.nu0s.split(",")]
    base = cfg.train.seed
    rows = experiment.ablation(cfg, batch_sizes, nu0s, range(base, base + args.seeds))
    print(json.dumps({"csv": str(Path(cfg.out) / "ablation.csv"), "runs": len(rows)}))
    return RUNTIME_ERROR if any(r["error"] for r in rows) else 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="awnn", description="Adaptive-width MLP training lab")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="write a synthetic dataset CSV and its split JSON")
    g.add_argument("--dataset", required=True, choices=datasets.DATASETS)
    g.add_argument("--n", type=int, default=None)
    g.add_argument("--noise", type=float, default=datasets.DEFAULT_NOISE)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", default="data")
    g.set_defaults(func=cmd_gen_data)

    def run_flags(q):
        q.add_argument("--seed", type=int)
        q.add_argument("--out")
        q.add_argument("--dataset", choices=datasets.DATASETS)
        q.add_argument("--epochs", type=int)
        q.add_argument("--batch-size", type=int)
        q.add_argument("--patience", type=int)
        q.add_argument("--lr", type=float)
        q.add_argument("--hidden-layers", type=int)
        q.add_argument("--activation")
        q.add_argument("--nu0", type=float)
        q.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override any config field, e.g. elbo.sigma_theta=10")

    t = sub.add_parser("train", help="train one seed or --seeds N seeds")
    t.add_argument("--config")
    t.add_argument("--seeds", type=int, help="run this many consecutive seeds and aggregate")
    run_flags(t)
    t.set_defaults(func=cmd_train)

    a = sub.add_parser("ablate", help="small batch-size x starting-rate grid")
    run_flags(a)
    a.add_argument("--batch-sizes", default="32,128")
    a.add_argument("--nu0s", default="0.01,0.05")
    a.add_argument("--seeds", type=int, default=1)
    a.set_defaults(func=cmd_ablate)

    def data_flags(q, required):
        q.add_argument("--data", required=required, help="dataset CSV")
        q.add_argument("--split", help="split JSON written by gen-data")
        q.add_argument("--part", choices=("train", "val", "test"))

    e = sub.add_parser("eval", help="print metrics JSON for a checkpoint")
    e.add_argument("--checkpoint", required=True)
    data_flags(e, True)
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("truncate", help="write a truncated copy of a checkpoint")
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--fraction", type=float, required=True)
    r.add_argument("--strategy", choices=compression.STRATEGIES, default="ordered")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--out", required=True)
    data_flags(r, False)
    r.set_defaults(func=cmd_truncate)

    s = sub.add_parser("sweep-truncate", help="accuracy versus removed fraction")
    s.add_argument("--checkpoint", required=True)
    data_flags(s, True)
    s.add_argument("--calibration-part", choices=("train", "val", "test"),
                   help="split used to rank neurons for the magnitude strategy")
    s.add_argument("--fractions", default="0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9")
    s.add_argument("--strategies", default=",".join(compression.STRATEGIES))
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", default="truncation.csv")
    s.set_defaults(func=cmd_sweep)

    x = sub.add_parser("repro-table1", help="all tabular tasks over several seeds")
    x.add_argument("--out", default="runs/table1")
    x.add_argument("--seeds", type=int, default=10)
    x.set_defaults(func=cmd_repro)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args) or 0
    except (UsageError, experiment.ConfigError, ParameterError) as exc:
        print(f"awnn {args.command}: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except Exception as exc:
        print(f"awnn {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return RUNTIME_ERROR


if __name__ == "__main__":
    sys.exit(main())
