"""Command-line entry points.

Subcommands::

    mitoadapt preprocess hm --source DIR --target DIR --direction s2t|t2s --zero-correct --out DIR
    mitoadapt preprocess clahe --input DIR --out DIR [--clip-limit F] [--tile-grid N]
    mitoadapt select-model --trace trace.json --criterion solidity|source_val|last_epoch
    mitoadapt train-baseline --config plan.toml --source DIR [--target DIR] --out DIR
    mitoadapt train-ssl     --config plan.toml --source DIR --target DIR --out DIR
    mitoadapt train-ynet    --config plan.toml --source DIR --target DIR --out DIR
    mitoadapt experiment run --config grid.toml --out DIR

Preprocess commands emit a new dataset directory plus a JSON sidecar
recording the transform parameters.  Train commands read a plan TOML
whose ``[[phases]]`` tables mirror PhaseConfig fields verbatim and write
checkpoints, a history.json and the selection trace.json to ``--out``.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, replace
from pathlib import Path

from .dataio import PatchSampler, load_dataset, save_dataset
from .harness import DatasetRegistry, ExperimentConfig, export_traces, run_grid
from .morpho import CRITERIA, SolidityTrace, select_by_criterion
from .nets import NetworkSpec
from .preprocess import DEFAULT_REGRESSION_WINDOW, clahe, match_stack
from .train import (
    PhaseConfig,
    TrainPlan,
    baseline_plan,
    ssl_plan,
    train_baseline,
    train_ssl,
    train_ynet,
    ynet_plan,
)

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


def load_plan_toml(path):
    """Read (plan, network spec, sampler) from a plan TOML file.

    Missing sections fall back to the defaults of the selected trainer.
    """
    with open(path, "rb") as fh:
        raw = tomllib.load(fh)
    spec = NetworkSpec(**raw.get("network", {}))
    sampler = PatchSampler(**raw.get("sampler", {}))
    plan = None
    if "phases" in raw:
        phases = []
        for entry in raw["phases"]:
            entry = dict(entry)
            if "freeze" in entry:
                entry["freeze"] = tuple(entry["freeze"])
            phases.append(PhaseConfig(**entry))
        plan = TrainPlan(
            phases=tuple(phases),
            checkpoint_every=int(raw.get("checkpoint_every", 1)),
            rng_seed=int(raw.get("rng_seed", 0)),
        )
    return plan, spec, sampler, raw


def _cmd_preprocess_hm(args) -> int:
    source = load_dataset(args.source)
    target = load_dataset(args.target)
    if args.direction == "s2t":
        transformed, reference = source, target
    else:
        transformed, reference = target, source
    matched = match_stack(
        transformed.images,
        reference.images,
        correct_zeros=args.zero_correct,
        window=args.window,
    )
    out = Path(args.out)
    save_dataset(replace(transformed, images=matched), out)
    sidecar = {
        "transform": "histogram_match",
        "direction": args.direction,
        "zero_correct": args.zero_correct,
        "regression_window": args.window,
        "source": str(args.source),
        "target": str(args.target),
    }
    (out / "transform.json").write_text(json.dumps(sidecar, indent=2))
    print(out)
    return 0


def _cmd_preprocess_clahe(args) -> int:
    ds = load_dataset(args.input)
    out = Path(args.out)
    save_dataset(
        replace(ds, images=clahe(ds.images, args.clip_limit, args.tile_grid)), out
    )
    sidecar = {
        "transform": "clahe",
        "clip_limit": args.clip_limit,
        "tile_grid": args.tile_grid,
        "input": str(args.input),
    }
    (out / "transform.json").write_text(json.dumps(sidecar, indent=2))
    print(out)
    return 0


def _cmd_select_model(args) -> int:
    trace = SolidityTrace.load_json(args.trace)
    epoch = select_by_criterion(trace, args.criterion)
    print(epoch)
    return 0


def _default_plan(kind: str, seed: int) -> TrainPlan:
    if kind == "baseline":
        return baseline_plan(rng_seed=seed)
    if kind == "ssl":
        return ssl_plan(rng_seed=seed)
    return ynet_plan(rng_seed=seed)


def _cmd_train(kind: str, args) -> int:
    plan, spec, sampler, raw = (None, None, None, {})
    if args.config:
        plan, spec, sampler, raw = load_plan_toml(args.config)
    if plan is None:
        plan = _default_plan(kind, args.seed)
    variant = "attention_ynet" if kind == "ynet" else "attention_unet"
    if "network" not in raw:
        spec = NetworkSpec(variant=variant)
    if args.config is None:
        sampler = PatchSampler()

    source = load_dataset(args.source)
    target = load_dataset(args.target) if args.target else None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    if kind == "baseline":
        result = train_baseline(
            source, spec, plan, sampler=sampler, eval_target=target, out_dir=out
        )
    elif kind == "ssl":
        result = train_ssl(
            source, target, spec, plan, sampler=sampler,
            hm_source=not args.no_hm, out_dir=out,
        )
    else:
        result = train_ynet(
            source, target, spec, plan, sampler=sampler,
            hm_after_first_phase=not args.no_hm, out_dir=out,
        )

    result.trace.save_json(out / "trace.json")
    with open(out / "trace.jsonl", "w") as fh:
        for entry in result.trace.entries:
            row = entry.to_dict()
            row["objective_solidity"] = result.trace.objective_solidity
            fh.write(json.dumps(row) + "\n")
    (out / "history.json").write_text(json.dumps(result.history, indent=2))
    (out / "plan.json").write_text(json.dumps(
        {"phases": [asdict(p) for p in plan.phases],
         "checkpoint_every": plan.checkpoint_every,
         "rng_seed": plan.rng_seed},
        indent=2,
    ))
    print(out / "trace.json")
    return 0


def _cmd_experiment_run(args) -> int:
    with open(args.config, "rb") as fh:
        raw = tomllib.load(fh)
    cfg = ExperimentConfig.from_toml(args.config)
    registry = DatasetRegistry()
    for name, root in raw.get("datasets", {}).items():
        registry.register_path(name, root)
    for family, styled in raw.get("styled", {}).items():
        registry.register_styled_dataset(
            styled["root"],
            styled["epochs"],
            family=family,
            labels_from=styled.get("labels_from"),
        )
    out = Path(args.out)
    run_grid(cfg, registry, out_dir=out)
    export_traces(out, plot=not args.no_plots)
    print(out / "table.csv")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mitoadapt", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    pre = sub.add_parser("preprocess", help="dataset preprocessing")
    pre_sub = pre.add_subparsers(dest="preprocess_command", required=True)
    hm = pre_sub.add_parser("hm", help="histogram matching between two datasets")
    hm.add_argument("--source", required=True)
    hm.add_argument("--target", required=True)
    hm.add_argument("--direction", choices=("s2t", "t2s"), default="s2t")
    hm.add_argument("--zero-correct", action="store_true")
    hm.add_argument("--window", type=int, default=DEFAULT_REGRESSION_WINDOW)
    hm.add_argument("--out", required=True)
    hm.set_defaults(func=_cmd_preprocess_hm)
    cl = pre_sub.add_parser("clahe", help="contrast-limited adaptive equalization")
    cl.add_argument("--input", required=True)
    cl.add_argument("--clip-limit", type=float, default=2.0)
    cl.add_argument("--tile-grid", type=int, default=8)
    cl.add_argument("--out", required=True)
    cl.set_defaults(func=_cmd_preprocess_clahe)

    sel = sub.add_parser("select-model", help="pick a checkpoint epoch from a trace")
    sel.add_argument("--trace", required=True)
    sel.add_argument("--criterion", choices=CRITERIA, default="solidity")
    sel.set_defaults(func=_cmd_select_model)

    for kind in ("baseline", "ssl", "ynet"):
        tr = sub.add_parser(f"train-{kind}", help=f"run the {kind} training recipe")
        tr.add_argument("--config", default=None, help="plan TOML (defaults to the published recipe)")
        tr.add_argument("--source", required=True)
        tr.add_argument("--target", required=kind != "baseline")
        tr.add_argument("--out", required=True)
        tr.add_argument("--seed", type=int, default=0)
        tr.add_argument("--no-hm", action="store_true",
                        help="skip the built-in histogram-matching step")
        tr.set_defaults(func=lambda a, k=kind: _cmd_train(k, a))

    exp = sub.add_parser("experiment", help="cross-dataset experiment grid")
    exp_sub = exp.add_subparsers(dest="experiment_command", required=True)
    run = exp_sub.add_parser("run", help="execute a method x pair x repeat grid")
    run.add_argument("--config", required=True)
    run.add_argument("--out", required=True)
    run.add_argument("--no-plots", action="store_true")
    run.set_defaults(func=_cmd_experiment_run)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
