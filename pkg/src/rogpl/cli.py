"""Command-line interface: prepare, train, eval, sweep."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys

from .bench import NoiseSpec, build_scenario, evaluate, run_experiment, CSV_COLUMNS
from .graph import SplitSpec, convert_planetoid, load_dataset
from .model_io import load_model, save_model
from .pipeline import AblationFlags, TrainConfig, train


def load_config(path: str) -> tuple[TrainConfig, NoiseSpec]:
    """Split a flat JSON config into TrainConfig and NoiseSpec; unknown keys
    are rejected."""
    with open(path) as f:
        raw = json.load(f)
    train_fields = {f.name for f in dataclasses.fields(TrainConfig)}
    noise_fields = {f.name for f in dataclasses.fields(NoiseSpec)}
    train_kwargs, noise_kwargs = {}, {}
    for key, value in raw.items():
        if key in train_fields:
            train_kwargs[key] = value
        elif key == "noise_seed":
            noise_kwargs["seed"] = value
        elif key in noise_fields - {"seed"}:
            noise_kwargs[key] = value
        else:
            raise SystemExit(f"unknown config key: {key!r}")
    return TrainConfig(**train_kwargs), NoiseSpec(**noise_kwargs)


def cmd_prepare(args: argparse.Namespace) -> int:
    name = args.name or _detect_dataset_name(args.raw)
    g = convert_planetoid(args.raw, name, args.out,
                          sample=args.sample, seed=args.seed)
    print(f"wrote {args.out}: {g.n_nodes} nodes, {g.n_features} features, "
          f"{g.n_known_classes} classes, {g.adjacency.nnz // 2} edges")
    return 0


def _detect_dataset_name(raw_dir: str) -> str:
    import os

    names = {f.split(".")[1] for f in os.listdir(raw_dir)
             if f.startswith("ind.") and f.count(".") >= 2}
    if len(names) == 1:
        return names.pop()
    if not names:
        raise SystemExit(f"no ind.<name>.* raw files found in {raw_dir}")
    raise SystemExit(
        f"multiple datasets in {raw_dir} ({sorted(names)}); pass --name")


def cmd_train(args: argparse.Namespace) -> int:
    cfg, noise = load_config(args.config)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
        noise = dataclasses.replace(noise, seed=args.seed)
    variant = AblationFlags.from_name(args.ablate)
    g = load_dataset(args.data)
    nd = build_scenario(g, noise, SplitSpec(seed=noise.seed))
    model = train(nd.graph, nd.train_ids, nd.val_ids, cfg, variant,
                  log_path=args.log, diagnostics_path=args.diagnostics)
    model.noise_config = dataclasses.asdict(noise)
    save_model(model, args.out)
    metrics = evaluate(model, nd)
    print(f"saved {args.out}; test macro_f1={metrics.macro_f1:.4f} "
          f"auroc={metrics.auroc:.4f}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    model = load_model(args.model)
    if model.noise_config is None:
        raise SystemExit("model carries no noise config; re-evaluate via `rogpl train`")
    noise = NoiseSpec(**model.noise_config)
    g = load_dataset(args.data)
    nd = build_scenario(g, noise, SplitSpec(seed=noise.seed))
    metrics = evaluate(model, nd)
    row = {"dataset": args.data, "ood_mode": noise.ood_mode,
           "ind_rate": noise.ind_rate, "ood_rate": noise.ood_rate,
           "variant": model.diagnostics.get("variant", "full"),
           "seed": model.config.seed, "macro_f1": metrics.macro_f1,
           "auroc": metrics.auroc, "known_acc": metrics.known_acc,
           "unknown_acc": metrics.unknown_acc, "overall_acc": metrics.overall_acc,
           "n_clean_final": model.diagnostics.get("n_clean_final", ""),
           "wall_seconds": 0.0}
    with open(args.out, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=CSV_COLUMNS)
        writer.writeheader()
        writer.writerow(row)
    print(f"wrote {args.out}: macro_f1={metrics.macro_f1:.4f} auroc={metrics.auroc:.4f}")
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    cfg, noise = load_config(args.config)
    g = load_dataset(args.data)
    values = [float(v) for v in args.values.split(",")]
    far_source = None
    if noise.ood_mode == "far" and noise.far_source:
        far_source = load_dataset(noise.far_source)
    for value in values:
        if args.axis == "ind":
            run_noise = dataclasses.replace(noise, ind_rate=value)
        else:
            run_noise = dataclasses.replace(noise, ood_rate=value)
        rows = run_experiment(g, run_noise, cfg, AblationFlags.from_name(args.ablate),
                              n_seeds=args.seeds, out_csv=args.out,
                              dataset_name=args.data, far_source=far_source)
        agg = rows[-1]
        print(f"{args.axis}={value}: median macro_f1={agg['macro_f1']:.4f} "
              f"auroc={agg['auroc']:.4f}")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="rogpl",
        description="Robust open-set node classification on noisy graphs")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="convert raw planetoid files to the TSV layout")
    p.add_argument("--in", dest="raw", required=True, help="directory with ind.<name>.* files")
    p.add_argument("--name", default=None,
                   help="dataset name, e.g. cora (auto-detected when unambiguous)")
    p.add_argument("--out", required=True)
    p.add_argument("--sample", type=int, default=None,
                   help="keep a stratified subset of this many nodes")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="build the noise scenario and train a model")
    p.add_argument("--data", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--ablate", choices=list(AblationFlags.NAMES), default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--log", default=None, help="write per-epoch JSONL records here")
    p.add_argument("--diagnostics", default=None, help="write denoiser TSV here")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a saved model on its scenario")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="noise-rate sweep with per-seed and median rows")
    p.add_argument("--axis", choices=["ind", "ood"], required=True)
    p.add_argument("--values", required=True, help="comma-separated rates")
    p.add_argument("--data", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--seeds", type=int, default=3)
    p.add_argument("--ablate", choices=list(AblationFlags.NAMES), default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
