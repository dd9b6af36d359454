"""Experiment protocols: the three-arm method comparison (direct /
pretrained-test / transfer), the ablation matrix, and the
epochs-to-target transfer-benefit measurement."""

from __future__ import annotations

import statistics
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

from .blocks import NetworkConfig
from .checkpoint import Checkpoint, restore
from .correlation import DIVERGENCES
from .data import Case, DataError
from .losses import LossConfig
from .metrics import MetricReport
from .network import ModelVariant, build_model
from .training import (
    TrainResult,
    TrainSchedule,
    build_transfer_model,
    dataset_dice,
    evaluate,
    train,
)

MODES = ("direct", "pretrained_test", "transfer")

DIVERGENCE_LABELS = {
    "kl": "Kullback-Leibler",
    "jeffreys": "Jeffreys",
    "hellinger2": "squared Hellinger",
}
TASK_LABELS = ("Segmentation", "Prediction")


@dataclass(frozen=True)
class ExperimentSpec:
    label: str
    mode: str = "direct"
    fusion: bool = True
    correlation: str = "nonlinear"  # nonlinear | linear | off
    divergence: str | None = "kl"
    seed: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise DataError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.correlation == "off":
            if self.divergence is not None:
                raise DataError("correlation=off forbids a divergence choice")
        else:
            if self.divergence not in DIVERGENCES:
                raise DataError(f"divergence must be one of {DIVERGENCES}, got {self.divergence!r}")

    def variant(self) -> ModelVariant:
        return ModelVariant(
            include_prediction=True,
            correlation_form=self.correlation,
            use_fusion=self.fusion,
        )


def component_specs(divergence: str = "kl", seed: int = 0) -> list[ExperimentSpec]:
    """Baseline / +MMFF / +MMFF+correlation rows."""
    return [
        ExperimentSpec("Baseline", fusion=False, correlation="off", divergence=None, seed=seed),
        ExperimentSpec("Baseline + MMFF", fusion=True, correlation="off", divergence=None, seed=seed),
        ExperimentSpec(
            "Baseline + MMFF + Correlation learning",
            fusion=True,
            correlation="nonlinear",
            divergence=divergence,
            seed=seed,
        ),
    ]


def divergence_specs(seed: int = 0) -> list[ExperimentSpec]:
    return [
        ExperimentSpec(DIVERGENCE_LABELS[name], correlation="nonlinear", divergence=name, seed=seed)
        for name in DIVERGENCES
    ]


def correlation_form_specs(divergence: str = "kl", seed: int = 0) -> list[ExperimentSpec]:
    return [
        ExperimentSpec("Linear", correlation="linear", divergence=divergence, seed=seed),
        ExperimentSpec("Non-linear", correlation="nonlinear", divergence=divergence, seed=seed),
    ]


@dataclass
class AblationRow:
    label: str
    task: str
    dsc_pct: float | None
    hd_px: float | None
    sensitivity_pct: float | None


@dataclass
class AblationResult:
    label_column: str
    rows: list[AblationRow] = field(default_factory=list)
    failures: dict[str, str] = field(default_factory=dict)

    def to_tsv(self, path) -> None:
        header = [self.label_column, "task", "dsc_pct", "hd_px", "sensitivity_pct"]
        lines = ["\t".join(header)]
        for row in self.rows:
            lines.append(
                "\t".join(
                    [row.label, row.task]
                    + ["NA" if v is None else repr(float(v)) for v in (row.dsc_pct, row.hd_px, row.sensitivity_pct)]
                )
            )
        Path(path).write_text("\n".join(lines) + "\n")


def run_experiment(
    spec: ExperimentSpec,
    train_cases: Sequence[Case],
    test_cases: Sequence[Case],
    config: NetworkConfig,
    schedule: TrainSchedule,
    loss_cfg: LossConfig = LossConfig(),
    checkpoint: Checkpoint | None = None,
    transfer_fusion: bool = True,
) -> tuple[MetricReport, TrainResult | None]:
    sched = replace(schedule, seed=spec.seed)
    divergence = spec.divergence or "kl"
    if spec.mode == "pretrained_test":
        if checkpoint is None:
            raise DataError("pretrained_test mode needs a pretraining checkpoint")
        model = build_model(checkpoint.config, checkpoint.variant, seed=spec.seed)
        restore(model, checkpoint)
        return evaluate(test_cases, model), None
    if spec.mode == "transfer":
        if checkpoint is None:
            raise DataError("transfer mode needs a pretraining checkpoint")
        model, _ = build_transfer_model(
            checkpoint, config, spec.variant(), seed=spec.seed, transfer_fusion=transfer_fusion
        )
    else:
        model = build_model(config, spec.variant(), seed=spec.seed)
    result = train(train_cases, model, sched, loss_cfg, mode="full", divergence=divergence)
    return evaluate(test_cases, model), result


def run_ablation(
    specs: Sequence[ExperimentSpec],
    label_column: str,
    train_cases: Sequence[Case],
    test_cases: Sequence[Case],
    config: NetworkConfig,
    schedule: TrainSchedule,
    loss_cfg: LossConfig = LossConfig(),
    checkpoint: Checkpoint | None = None,
) -> AblationResult:
    """Train and evaluate every spec with shared data and seeds; failures
    are recorded per spec and the run continues."""
    result = AblationResult(label_column=label_column)
    for spec in specs:
        try:
            report, _ = run_experiment(
                spec, train_cases, test_cases, config, schedule, loss_cfg, checkpoint
            )
            for task, task_label in zip(("segmentation", "prediction"), TASK_LABELS):
                agg = report.aggregate(task)
                result.rows.append(
                    AblationRow(
                        label=spec.label,
                        task=task_label,
                        dsc_pct=agg.dsc_pct,
                        hd_px=agg.hd_px,
                        sensitivity_pct=agg.sensitivity_pct,
                    )
                )
        except Exception as exc:  # per-spec failure must not kill the matrix
            result.failures[spec.label] = f"{type(exc).__name__}: {exc}"
            for task_label in TASK_LABELS:
                result.rows.append(AblationRow(spec.label, task_label, None, None, None))
    return result


@dataclass
class OverfitResult:
    log: list[dict]
    epochs_run: int
    target_epoch: int | None  # first probed epoch with both targets met
    seg_dsc: float
    pred_dsc: float


def overfit_experiment(
    cases: Sequence[Case],
    config: NetworkConfig,
    schedule: TrainSchedule,
    loss_cfg: LossConfig = LossConfig(),
    divergence: str = "kl",
    seg_target: float = 0.90,
    pred_target: float = 0.80,
    probe_every: int = 3,
    model_seed: int = 0,
):
    """Train the full network on a small set and stop as soon as the
    training-set DSC targets are met (probed every ``probe_every`` epochs).

    Returns (model, OverfitResult); final DSCs are computed from the
    returned best-validation weights.
    """
    model = build_model(config, ModelVariant(correlation_form="nonlinear"), seed=model_seed)
    state = {"target_epoch": None}

    def callback(m, record) -> bool:
        if record["epoch"] % probe_every != 0:
            return False
        seg, pred = dataset_dice(m, cases)
        if seg >= seg_target and pred >= pred_target:
            state["target_epoch"] = record["epoch"]
            return True
        return False

    result = train(
        cases, model, schedule, loss_cfg, mode="full", divergence=divergence, epoch_callback=callback
    )
    seg, pred = dataset_dice(model, cases)
    return model, OverfitResult(
        log=result.log,
        epochs_run=len(result.log),
        target_epoch=state["target_epoch"],
        seg_dsc=seg,
        pred_dsc=pred,
    )


#: experiment-scale network for single-core desk runs: same architecture,
#: narrower channels
DESK_NETWORK = NetworkConfig(levels=4, base_channels=6, input_size=128)


@dataclass
class TransferBenefitResult:
    epochs_direct: list[int]
    epochs_transfer: list[int]
    target_dsc: float

    @property
    def median_direct(self) -> float:
        return statistics.median(self.epochs_direct)

    @property
    def median_transfer(self) -> float:
        return statistics.median(self.epochs_transfer)

    @property
    def transfer_not_slower(self) -> bool:
        return self.median_transfer <= self.median_direct


def epochs_to_target(
    cases: Sequence[Case],
    model,
    schedule: TrainSchedule,
    loss_cfg: LossConfig,
    target_dsc: float,
    divergence: str = "kl",
) -> int:
    """Train until validation segmentation DSC first reaches the target;
    returns that epoch (or max_epochs+1 when never reached)."""
    hit = {"epoch": schedule.max_epochs + 1}

    def callback(_model, record) -> bool:
        if record["val_dsc_seg"] >= target_dsc and hit["epoch"] > record["epoch"]:
            hit["epoch"] = record["epoch"]
            return True
        return False

    train(cases, model, schedule, loss_cfg, mode="full", divergence=divergence, epoch_callback=callback)
    return hit["epoch"]


def transfer_benefit_experiment(
    checkpoint: Checkpoint,
    target_cases: Sequence[Case],
    config: NetworkConfig,
    schedule: TrainSchedule,
    loss_cfg: LossConfig = LossConfig(),
    seeds: Sequence[int] = (0, 1, 2),
    target_dsc: float = 0.80,
) -> TransferBenefitResult:
    """Epochs-to-target comparison between transfer init and random init,
    one pair of runs per seed."""
    epochs_direct = []
    epochs_transfer = []
    variant = ModelVariant()
    for seed in seeds:
        sched = replace(schedule, seed=seed)
        direct_model = build_model(config, variant, seed=seed)
        epochs_direct.append(epochs_to_target(target_cases, direct_model, sched, loss_cfg, target_dsc))
        transfer_model, _ = build_transfer_model(checkpoint, config, variant, seed=seed)
        epochs_transfer.append(
            epochs_to_target(target_cases, transfer_model, sched, loss_cfg, target_dsc)
        )
    return TransferBenefitResult(
        epochs_direct=epochs_direct,
        epochs_transfer=epochs_transfer,
        target_dsc=target_dsc,
    )
