#!/usr/bin/env python3
"""Transfer-benefit experiment: pretrain the segmentation-only model on 64
synthetic source cases, then compare epochs-to-target validation DSC on a
small noisy target set between transferred and randomly initialized
networks (median over 3 seeds)."""

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from recurseg.checkpoint import load_checkpoint, save_checkpoint
from recurseg.experiments import DESK_NETWORK, transfer_benefit_experiment
from recurseg.losses import LossConfig
from recurseg.synthetic import SynthConfig, generate_dataset
from recurseg.training import TrainSchedule, pretrain


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="runs/transfer_benefit")
    parser.add_argument("--source-cases", type=int, default=64)
    parser.add_argument("--target-cases", type=int, default=8)
    parser.add_argument("--target-dsc", type=float, default=0.80)
    parser.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    args = parser.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    source = generate_dataset(SynthConfig(seed=31), args.source_cases)
    schedule = TrainSchedule(lr=2e-3, max_epochs=120, batch_size=8, seed=0)
    print(f"pretraining on {len(source)} source cases ...")
    model, result = pretrain(
        source,
        DESK_NETWORK,
        schedule,
        LossConfig(),
        epoch_callback=lambda m, rec: rec["val_dsc_seg"] >= 0.93,
    )
    best_dsc = max(rec["val_dsc_seg"] for rec in result.log)
    print(f"pretrain: {len(result.log)} epochs, best val DSC {best_dsc:.3f}")
    ckpt_path = save_checkpoint(out / "source_checkpoint.npz", model)
    ckpt = load_checkpoint(ckpt_path)

    target = generate_dataset(SynthConfig(seed=77, noise_std=0.15), args.target_cases)
    finetune = replace(schedule, batch_size=4)
    benefit = transfer_benefit_experiment(
        ckpt,
        target,
        DESK_NETWORK,
        finetune,
        LossConfig(),
        seeds=tuple(args.seeds),
        target_dsc=args.target_dsc,
    )
    print(f"epochs to val DSC {args.target_dsc}:")
    print(f"  transfer: {benefit.epochs_transfer} (median {benefit.median_transfer})")
    print(f"  direct:   {benefit.epochs_direct} (median {benefit.median_direct})")
    print("transfer not slower" if benefit.transfer_not_slower else "transfer SLOWER")
    return 0 if benefit.transfer_not_slower else 1


if __name__ == "__main__":
    sys.exit(main())
