"""Command-line entry point.

Subcommands wire the library into the experiment workflows: synthetic-data
generation, the training-free zero-shot baseline, few-shot training, the
init-strategy and aggregator ablations, attention export, prototype
ensembling, and report re-rendering.

Every command is deterministic given its flags and input files; commands
with randomness require an explicit ``--seed``. Exit codes: 0 success,
2 usage error, 3 data error, 4 numeric failure. Errors print a single
``error: <kind>: <message>`` line on stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import dataio, metrics, modelio, trainer
from .aggregators import AggregatorKind, forward
from .errors import MissingFile, UsageError, ZsmilError
from .head import InitStrategy
from .prototypes import ensemble, load_prototypes, load_template_embeddings, save_prototypes
from .trainer import TrainConfig, run_protocol, write_report
from .zeroshot import zero_shot_predict

INIT_FLAGS = [s.value for s in InitStrategy]
AGG_FLAGS = [k.value for k in AggregatorKind]

# TrainConfig fields settable through --config / flags
_CONFIG_KEYS = ("optimizer", "lr", "beta1", "beta2", "eps", "epochs", "patience",
                "tau", "learn_tau", "freeze_head", "hidden")


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file; explicit flags win")
    p.add_argument("--optimizer", choices=["adam", "sgd"], default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--patience", type=int, default=None)
    p.add_argument("--tau", type=float, default=None)
    p.add_argument("--learn-tau", action="store_true", default=None)
    p.add_argument("--freeze-head", action="store_true", default=None)
    p.add_argument("--hidden", type=int, default=None,
                   help="attention hidden size (abmil) / head width (transformer)")
    p.add_argument("--val-fraction", type=float, default=0.2,
                   help="validation carve when the manifest has no val split")
    p.add_argument("--k", type=int, action="append",
                   help="shots per class; repeatable (default: 4 and 16)")
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)


def _build_config(args, init: InitStrategy, agg: AggregatorKind) -> TrainConfig:
    config = TrainConfig(aggregator=agg, init=init)
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise MissingFile(str(path))
        with open(path, encoding="utf-8") as fh:
            file_cfg = json.load(fh)
        for key, value in file_cfg.items():
            if key not in _CONFIG_KEYS:
                raise UsageError(f"unknown config key {key!r}")
            setattr(config, key, value)
    for key in _CONFIG_KEYS:
        value = getattr(args, key, None)
        if value is not None:
            setattr(config, key, value)
    config.validate()
    return config


def _load_inputs(args):
    protos = load_prototypes(args.protos)
    entries = dataio.load_manifest(args.manifest, n_classes=protos.n_classes)
    return entries, protos


def _emit_protocol(args, report, models) -> None:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report["inputs"] = {"manifest": str(args.manifest), "prototypes": str(args.protos)}
    write_report(report, out / "report.json")
    table = metrics.render_table(report)
    (out / "report.txt").write_text(table, encoding="utf-8")
    sys.stdout.write(table)
    for arm, k, repeat, model in models:
        modelio.save_model(model, out / f"model_{arm}_k{k}_r{repeat}")


def cmd_synth(args) -> int:
    if args.spec:
        spec_path = Path(args.spec)
        if not spec_path.is_file():
            raise MissingFile(str(spec_path))
        with open(spec_path, encoding="utf-8") as fh:
            spec = dataio.SyntheticSpec.from_json(json.load(fh))
        spec.seed = args.seed
    else:
        spec = dataio.SyntheticSpec(seed=args.seed)
    for flag, attr in (("classes", "n_classes"), ("dim", "dim"),
                       ("evidence", "evidence_fraction"),
                       ("separation", "class_separation"), ("sigma", "noise_sigma"),
                       ("proto_noise", "prototype_noise")):
        value = getattr(args, flag)
        if value is not None:
            setattr(spec, attr, value)
    for flag, split in (("train", "train_pool"), ("val", "val"), ("test", "test")):
        value = getattr(args, flag)
        if value is not None:
            spec.bags_per_class[split] = value
    if args.patches_min is not None or args.patches_max is not None:
        lo = args.patches_min if args.patches_min is not None else spec.patches_per_bag[0]
        hi = args.patches_max if args.patches_max is not None else spec.patches_per_bag[1]
        spec.patches_per_bag = (lo, hi)
    if args.balanced:
        spec.class_ratios = [1.0] * spec.n_classes
    entries, _ = dataio.generate_synthetic(spec, args.out)
    print(f"wrote {len(entries)} bags to {args.out}")
    return 0


def cmd_zeroshot(args) -> int:
    entries, protos = _load_inputs(args)
    result = zero_shot_predict(entries, protos, args.split)
    print(f"balanced_accuracy {result['balanced_accuracy']!r}")
    for name, recall in zip(protos.class_names, result["per_class_recall"]):
        print(f"recall {name} {recall!r}")
    print(f"renormalized_rows {result['renormalized_rows']}")
    return 0


def cmd_train(args) -> int:
    entries, protos = _load_inputs(args)
    config = _build_config(args, InitStrategy.from_flag(args.init),
                           AggregatorKind.from_flag(args.agg))
    k_list = args.k or [4, 16]
    report, models = run_protocol(
        entries, protos, config, k_list, repeats=args.repeats, base_seed=args.seed,
        jobs=args.jobs, val_fraction=args.val_fraction, keep_models=True)
    report["kind"] = "train"
    _emit_protocol(args, report, models)
    return 0


def cmd_ablate_init(args) -> int:
    entries, protos = _load_inputs(args)
    config = _build_config(args, InitStrategy.ZERO_SHOT, AggregatorKind.ABMIL)
    arms = [{"name": s.value, "overrides": {"init": s}} for s in InitStrategy]
    k_list = args.k or [4, 16]
    report = run_protocol(entries, protos, config, k_list, repeats=args.repeats,
                          base_seed=args.seed, arms=arms, jobs=args.jobs,
                          val_fraction=args.val_fraction)
    report["kind"] = "ablate-init"
    _emit_protocol(args, report, [])
    return 0


def cmd_ablate_agg(args) -> int:
    entries, protos = _load_inputs(args)
    config = _build_config(args, InitStrategy.ZERO_SHOT, AggregatorKind.ABMIL)
    order = (AggregatorKind.BGMP, AggregatorKind.BGAP, AggregatorKind.ABMIL,
             AggregatorKind.SIMPLE_TRANSFORMER)
    arms = [{"name": f"zs-{kind.value}", "overrides": {"aggregator": kind}}
            for kind in order]
    k_list = args.k or [4, 16]
    report = run_protocol(entries, protos, config, k_list, repeats=args.repeats,
                          base_seed=args.seed, arms=arms, jobs=args.jobs,
                          val_fraction=args.val_fraction)
    report["kind"] = "ablate-agg"
    _emit_protocol(args, report, [])
    return 0


def cmd_export_attention(args) -> int:
    model = modelio.load_model(args.model)
    entries = dataio.load_manifest(args.manifest)
    matching = [e for e in entries if e.slide_id == args.slide_id]
    if not matching:
        raise MissingFile(f"slide {args.slide_id!r} not in manifest")
    bag = dataio.load_bag(matching[0])
    _, _, attention = forward(model.aggregator, model.agg_params, bag)
    sidecar = metrics.export_attention(model.aggregator.value, bag, attention,
                                       args.slide_id, args.out)
    print(f"wrote {sidecar['n_patches']} attention weights to {args.out}")
    return 0


def cmd_report(args) -> int:
    reports = [trainer.read_report(p) for p in args.inputs]
    if args.format == "json":
        json.dump(reports if len(reports) > 1 else reports[0], sys.stdout,
                  sort_keys=True, indent=2)
        sys.stdout.write("\n")
    else:
        for report in reports:
            sys.stdout.write(metrics.render_table(report))
    return 0


def cmd_ensemble(args) -> int:
    templates = load_template_embeddings(args.templates)
    protos = ensemble(templates, temperature_default=args.temperature)
    save_prototypes(protos, args.out)
    print(f"wrote {protos.n_classes} prototypes (dim {protos.dim}) to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="zsmil",
        description="few-shot MIL classification over precomputed patch embeddings, "
                    "with zero-shot prototype initialization")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic embedding dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--spec", help="JSON synthetic-dataset spec; flags win")
    p.add_argument("--classes", type=int, default=None)
    p.add_argument("--dim", type=int, default=None)
    p.add_argument("--train", type=int, default=None, help="train-pool bags for class 0")
    p.add_argument("--val", type=int, default=None)
    p.add_argument("--test", type=int, default=None)
    p.add_argument("--patches-min", type=int, default=None)
    p.add_argument("--patches-max", type=int, default=None)
    p.add_argument("--evidence", type=float, default=None)
    p.add_argument("--separation", type=float, default=None)
    p.add_argument("--sigma", type=float, default=None)
    p.add_argument("--proto-noise", type=float, default=None)
    p.add_argument("--balanced", action="store_true", help="equal bags per class")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("zeroshot", help="training-free zero-shot evaluation")
    p.add_argument("--manifest", required=True)
    p.add_argument("--protos", required=True)
    p.add_argument("--split", default="test", choices=list(dataio.SPLITS))
    p.set_defaults(func=cmd_zeroshot)

    p = sub.add_parser("train", help="few-shot training protocol")
    p.add_argument("--manifest", required=True)
    p.add_argument("--protos", required=True)
    p.add_argument("--agg", default="abmil", choices=AGG_FLAGS)
    p.add_argument("--init", default="zeroshot", choices=INIT_FLAGS)
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("ablate-init",
                       help="compare head initializations (aggregator fixed to abmil)")
    p.add_argument("--manifest", required=True)
    p.add_argument("--protos", required=True)
    _add_train_flags(p)
    p.set_defaults(func=cmd_ablate_init)

    p = sub.add_parser("ablate-agg",
                       help="compare aggregators (init fixed to zeroshot)")
    p.add_argument("--manifest", required=True)
    p.add_argument("--protos", required=True)
    _add_train_flags(p)
    p.set_defaults(func=cmd_ablate_agg)

    p = sub.add_parser("export-attention", help="per-patch attention for one slide")
    p.add_argument("--model", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--slide-id", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_attention)

    p = sub.add_parser("report", help="re-render saved run reports")
    p.add_argument("--in", dest="inputs", nargs="+", required=True)
    p.add_argument("--format", choices=["text", "json"], default="text")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("ensemble", help="build prototypes from template embeddings")
    p.add_argument("--templates", required=True, help="template-embedding index JSON")
    p.add_argument("--out", required=True, help="output prototype base path")
    p.add_argument("--temperature", type=float, default=0.07)
    p.set_defaults(func=cmd_ensemble)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ZsmilError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
