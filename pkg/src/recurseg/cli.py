"""Batch command-line surface.

Exit codes: 0 success, 1 validation/usage error, 2 runtime failure. Every
run writes its artifacts plus ``resolved-config.txt`` under the output
directory and touches nothing outside it. With ``--out`` omitted the
output root comes from ``$RECURSEG_OUTPUT_ROOT``.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path


from . import config as cfgmod
from . import experiments
from .checkpoint import load_checkpoint, restore, save_checkpoint
from .config import ConfigError
from .data import (
    DataError,
    load_dataset,
    preprocess_case,
    save_dataset,
    split_dataset,
    write_array,
)
from .metrics import binarize, case_metrics
from .network import build_model
from .overlay import render_overlay
from .synthetic import SynthConfig, generate_dataset
from .training import (
    TrainingDivergedError,
    build_transfer_model,
    evaluate,
    pretrain,
    predict_cases,
    train,
)

OUTPUT_ROOT_ENV = "RECURSEG_OUTPUT_ROOT"


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would sys.exit(2); we want exit 1
        raise UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="recurseg", description=__doc__)
    sub = parser.add_subparsers(dest="command", metavar="command")

    def common(p, data=True, checkpoint=False):
        p.add_argument("--out", help=f"output directory (default ${OUTPUT_ROOT_ENV}/<command>)")
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument(
            "--set",
            dest="overrides",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="override a single config key (repeatable)",
        )
        if data:
            p.add_argument("--data", required=True, help="dataset directory")
        if checkpoint:
            p.add_argument("--checkpoint", required=True, help="checkpoint .npz path")

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    common(p, data=False)
    p.add_argument("--n", type=int, help="number of cases")
    p.add_argument("--seed", type=int, help="generator seed")
    p.add_argument("--image-size", type=int, dest="image_size")
    p.add_argument("--noise-std", type=float, dest="noise_std")

    p = sub.add_parser("pretrain", help="train the segmentation-only model")
    common(p)

    p = sub.add_parser("train", help="train the full model from random init")
    common(p)

    p = sub.add_parser("transfer", help="transfer pretrained encoders, then fine-tune")
    common(p, checkpoint=True)
    p.add_argument("--freeze-encoders", action="store_true")
    p.add_argument("--no-transfer-fusion", action="store_true")

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    common(p, checkpoint=True)

    p = sub.add_parser("predict", help="write probability maps and masks")
    common(p, checkpoint=True)

    p = sub.add_parser("ablate", help="run the component/divergence/correlation ablation tables")
    common(p)
    p.add_argument(
        "--tables",
        default="components,divergences,correlations",
        help="comma list from components,divergences,correlations",
    )
    p.add_argument("--split-seed", type=int, default=0, help="80/20 split seed")

    p = sub.add_parser("overlay", help="render per-case contour overlays")
    common(p, checkpoint=True)

    return parser


def _outdir(args) -> Path:
    if args.out:
        out = Path(args.out)
    else:
        root = os.environ.get(OUTPUT_ROOT_ENV)
        if not root:
            raise UsageError(f"--out not given and ${OUTPUT_ROOT_ENV} is not set")
        out = Path(root) / args.command
    out.mkdir(parents=True, exist_ok=True)
    return out


def _resolved(args, extra_overrides: dict[str, str] | None = None) -> dict[str, str]:
    file_values = cfgmod.load_config_file(args.config) if args.config else {}
    overrides = {}
    for item in args.overrides:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    if extra_overrides:
        overrides.update(extra_overrides)
    return cfgmod.resolve(file_values, overrides)


def _cmd_synth(args) -> int:
    out = _outdir(args)
    flag_overrides = {}
    if args.n is not None:
        flag_overrides["synth.n"] = str(args.n)
    if args.seed is not None:
        flag_overrides["synth.seed"] = str(args.seed)
    if args.image_size is not None:
        flag_overrides["synth.image_size"] = str(args.image_size)
    if args.noise_std is not None:
        flag_overrides["synth.noise_std"] = repr(args.noise_std)
    cfg = _resolved(args, flag_overrides)
    synth = SynthConfig(
        image_size=int(cfg["synth.image_size"]),
        noise_std=float(cfg["synth.noise_std"]),
        recurrence_cue=float(cfg["synth.recurrence_cue"]),
        seed=int(cfg["synth.seed"]),
    )
    cases = generate_dataset(synth, int(cfg["synth.n"]))
    save_dataset(cases, out)
    cfgmod.write_resolved(cfg, out)
    print(f"wrote {len(cases)} cases to {out}")
    return 0


def _train_like(args, command: str) -> int:
    out = _outdir(args)
    cfg = _resolved(args)
    network = cfgmod.network_config(cfg)
    loss_cfg = cfgmod.loss_config(cfg)
    schedule = cfgmod.train_schedule(cfg)
    cases = load_dataset(args.data, require_recurrence=(command != "pretrain"))
    log_path = out / "training_log.jsonl"

    if command == "pretrain":
        model, result = pretrain(cases, network, schedule, loss_cfg, log_path=log_path)
    else:
        if command == "transfer":
            ckpt = load_checkpoint(args.checkpoint)
            if args.freeze_encoders:
                cfg["train.freeze_encoders"] = "on"
                schedule = cfgmod.train_schedule(cfg)
            if args.no_transfer_fusion:
                cfg["transfer.fusion"] = "off"
            model, _ = build_transfer_model(
                ckpt,
                network,
                cfgmod.model_variant(cfg),
                seed=schedule.seed,
                transfer_fusion=cfgmod.transfer_fusion(cfg),
            )
        else:
            model = build_model(network, cfgmod.model_variant(cfg), seed=schedule.seed)
        result = train(
            cases,
            model,
            schedule,
            loss_cfg,
            mode="full",
            divergence=cfgmod.divergence(cfg),
            log_path=log_path,
        )

    ckpt_path = save_checkpoint(
        out / "checkpoint.npz",
        model,
        extra={"best_epoch": result.best_epoch, "best_val_loss": result.best_val_loss},
    )
    cfgmod.write_resolved(cfg, out)
    print(
        f"{command}: best val loss {result.best_val_loss:.6f} at epoch {result.best_epoch}; "
        f"checkpoint {ckpt_path}"
    )
    return 0


def _load_model(checkpoint_path):
    ckpt = load_checkpoint(checkpoint_path)
    model = build_model(ckpt.config, ckpt.variant, seed=0)
    restore(model, ckpt)
    return model


def _cmd_eval(args) -> int:
    out = _outdir(args)
    cfg = _resolved(args)
    model = _load_model(args.checkpoint)
    cases = load_dataset(args.data, require_recurrence=model.decoder_pred is not None)
    report = evaluate(cases, model)
    tsv, jsonl = report.write(out)
    cfgmod.write_resolved(cfg, out)
    for task in ("segmentation", "prediction"):
        agg = report.aggregate(task)
        if agg.applicable:
            hd = "NA" if agg.hd_px is None else f"{agg.hd_px:.2f}"
            sens = "NA" if agg.sensitivity_pct is None else f"{agg.sensitivity_pct:.1f}"
            print(f"{task}: DSC {agg.dsc_pct:.1f}% HD {hd} px Sensitivity {sens}%")
        else:
            print(f"{task}: not applicable for this checkpoint")
    print(f"report: {tsv}")
    return 0


def _cmd_predict(args) -> int:
    out = _outdir(args)
    cfg = _resolved(args)
    model = _load_model(args.checkpoint)
    cases = load_dataset(args.data, require_recurrence=model.decoder_pred is not None)
    for cid, seg_prob, pred_prob in predict_cases(model, cases):
        case_dir = out / cid
        case_dir.mkdir(parents=True, exist_ok=True)
        write_array(case_dir / "seg_prob", seg_prob)
        write_array(case_dir / "seg_mask", binarize(seg_prob))
        if pred_prob is not None:
            write_array(case_dir / "rec_prob", pred_prob)
            write_array(case_dir / "rec_mask", binarize(pred_prob))
    cfgmod.write_resolved(cfg, out)
    print(f"wrote predictions for {len(cases)} cases to {out}")
    return 0


def _cmd_ablate(args) -> int:
    out = _outdir(args)
    cfg = _resolved(args)
    network = cfgmod.network_config(cfg)
    loss_cfg = cfgmod.loss_config(cfg)
    schedule = cfgmod.train_schedule(cfg)
    cases = load_dataset(args.data)
    split = split_dataset(cases, seed=args.split_seed)
    by_id = {c.id: c for c in cases}
    train_cases = [by_id[i] for i in split.train]
    test_cases = [by_id[i] for i in split.test] or train_cases

    tables = [t.strip() for t in args.tables.split(",") if t.strip()]
    known = {
        "components": (experiments.component_specs(), "methods", "ablation_components.tsv"),
        "divergences": (experiments.divergence_specs(), "divergence_function", "ablation_divergences.tsv"),
        "correlations": (
            experiments.correlation_form_specs(),
            "correlation_expression",
            "ablation_correlations.tsv",
        ),
    }
    unknown = [t for t in tables if t not in known]
    if unknown:
        raise UsageError(f"unknown table(s) {unknown}; choose from {sorted(known)}")

    for table in tables:
        specs, label_column, filename = known[table]
        result = experiments.run_ablation(
            specs, label_column, train_cases, test_cases, network, schedule, loss_cfg
        )
        result.to_tsv(out / filename)
        print(f"{table}: wrote {out / filename}")
        for label, err in result.failures.items():
            print(f"  [failed] {label}: {err}", file=sys.stderr)
    cfgmod.write_resolved(cfg, out)
    return 0


def _cmd_overlay(args) -> int:
    out = _outdir(args)
    cfg = _resolved(args)
    model = _load_model(args.checkpoint)
    cases = load_dataset(args.data, require_recurrence=model.decoder_pred is not None)
    by_id = {c.id: preprocess_case(c, model.config.input_size) for c in cases}
    for cid, seg_prob, pred_prob in predict_cases(model, cases):
        case = by_id[cid]
        dsc_seg = case_metrics(cid, binarize(seg_prob), case.tumor_mask_t1).dsc
        dsc_pred = None
        if pred_prob is not None:
            dsc_pred = case_metrics(cid, binarize(pred_prob), case.recurrence_mask_t2).dsc
        render_overlay(case, seg_prob, pred_prob, out / f"{cid}.png", dsc_seg, dsc_pred)
    cfgmod.write_resolved(cfg, out)
    print(f"wrote overlays for {len(cases)} cases to {out}")
    return 0


_COMMANDS = {
    "synth": _cmd_synth,
    "pretrain": lambda a: _train_like(a, "pretrain"),
    "train": lambda a: _train_like(a, "train"),
    "transfer": lambda a: _train_like(a, "transfer"),
    "eval": _cmd_eval,
    "predict": _cmd_predict,
    "ablate": _cmd_ablate,
    "overlay": _cmd_overlay,
}


def run_command(argv) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if not args.command:
            raise UsageError("a subcommand is required")
        return _COMMANDS[args.command](args)
    except (UsageError, ConfigError, DataError) as exc:
        parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (TrainingDivergedError, OSError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # unexpected; still a runtime failure
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run_command(sys.argv[1:]))


if __name__ == "__main__":
    main()
