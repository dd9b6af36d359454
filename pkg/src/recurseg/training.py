"""Training pipeline: optimizer schedule with plateau-halving and early
stopping, pretraining, encoder transfer, and evaluation."""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from . import metrics
from .blocks import NetworkConfig
from .checkpoint import ENCODER_SUBTREES, Checkpoint, restore_subtrees
from .correlation import correlation_loss
from .data import Case, DataError, preprocess_case
from .losses import LossConfig, dice_loss, segmentation_loss, total_loss
from .network import ModelVariant, RecurrenceNet, build_model


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite; training aborted."""


@dataclass(frozen=True)
class TrainSchedule:
    lr: float = 5e-4
    plateau_factor: float = 0.5
    plateau_patience: int = 10
    early_stop_patience: int = 50
    max_epochs: int = 500
    batch_size: int = 8
    seed: int = 0
    grad_clip_norm: float = 5.0
    val_fraction: float = 0.1
    freeze_encoders: bool = False

    def __post_init__(self):
        if not (0 < self.plateau_factor < 1):
            raise DataError("plateau_factor must lie in (0, 1)")
        if self.plateau_patience < 1 or self.early_stop_patience < 1:
            raise DataError("patiences must be positive")
        if self.max_epochs < 1 or self.batch_size < 1:
            raise DataError("max_epochs and batch_size must be positive")


@dataclass
class TrainResult:
    log: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    best_val_loss: float = math.inf
    stopped_early: bool = False


@dataclass
class CaseTensors:
    ids: list[str]
    flair: torch.Tensor  # (N, 1, S, S)
    t1c: torch.Tensor
    seg: torch.Tensor  # (N, S, S) float
    rec: torch.Tensor

    def __len__(self) -> int:
        return len(self.ids)

    def subset(self, indices) -> "CaseTensors":
        idx = torch.as_tensor(indices, dtype=torch.long)
        return CaseTensors(
            ids=[self.ids[i] for i in idx.tolist()],
            flair=self.flair[idx],
            t1c=self.t1c[idx],
            seg=self.seg[idx],
            rec=self.rec[idx],
        )


def prepare_tensors(cases: Sequence[Case], input_size: int) -> CaseTensors:
    """Resize + normalize every case and stack into network-ready tensors,
    in id-sorted order."""
    ordered = sorted(cases, key=lambda c: c.id)
    pre = [preprocess_case(c, input_size) for c in ordered]
    return CaseTensors(
        ids=[c.id for c in pre],
        flair=torch.from_numpy(np.stack([c.flair_t1 for c in pre])[:, None, :, :]),
        t1c=torch.from_numpy(np.stack([c.t1c_t1 for c in pre])[:, None, :, :]),
        seg=torch.from_numpy(np.stack([c.tumor_mask_t1 for c in pre]).astype(np.float32)),
        rec=torch.from_numpy(np.stack([c.recurrence_mask_t2 for c in pre]).astype(np.float32)),
    )


def validation_carveout(tensors: CaseTensors, fraction: float = 0.1) -> tuple[CaseTensors, CaseTensors]:
    """Last ``fraction`` of the training set by sorted id becomes the
    validation subset (at least one case each side)."""
    n = len(tensors)
    if n < 2:
        raise DataError("need at least 2 cases to carve out validation")
    n_val = max(1, int(math.floor(fraction * n + 0.5)))
    if n_val >= n:
        n_val = n - 1
    return tensors.subset(range(n - n_val)), tensors.subset(range(n - n_val, n))


def _batch_losses(
    model: RecurrenceNet,
    batch: CaseTensors,
    loss_cfg: LossConfig,
    mode: str,
    divergence: str,
):
    out = model(batch.flair, batch.t1c, mode=mode)
    dice_seg = dice_loss(out.seg_map, batch.seg, loss_cfg.epsilon)
    if out.g_flair is not None:
        cor = correlation_loss(out.f_flair, out.f_t1c, out.g_flair, out.g_t1c, divergence)
    else:
        cor = 0.0
    seg_l = segmentation_loss(dice_seg, cor, loss_cfg.phi)
    pred_dice = None
    if out.pred_map is not None:
        pred_dice = dice_loss(out.pred_map, batch.rec, loss_cfg.epsilon)
    return total_loss(seg_l, pred_dice, loss_cfg), out


def _evaluate_split(
    model: RecurrenceNet,
    tensors: CaseTensors,
    loss_cfg: LossConfig,
    mode: str,
    divergence: str,
    batch_size: int,
) -> tuple[float, float, float | None]:
    """(mean loss, mean seg DSC, mean pred DSC or None) over a split."""
    model.eval()
    losses = []
    seg_dscs = []
    pred_dscs = []
    with torch.no_grad():
        for start in range(0, len(tensors), batch_size):
            batch = tensors.subset(range(start, min(start + batch_size, len(tensors))))
            loss, out = _batch_losses(model, batch, loss_cfg, mode, divergence)
            losses.append(float(loss) * len(batch))
            for i in range(len(batch)):
                seg_pred = metrics.binarize(out.seg_map[i].numpy())
                seg_dscs.append(metrics.dsc(metrics.confusion_counts(seg_pred, batch.seg[i].numpy().astype(np.uint8))))
                if out.pred_map is not None:
                    rec_pred = metrics.binarize(out.pred_map[i].numpy())
                    pred_dscs.append(metrics.dsc(metrics.confusion_counts(rec_pred, batch.rec[i].numpy().astype(np.uint8))))
    model.train()
    mean_loss = sum(losses) / len(tensors)
    mean_seg = float(np.mean(seg_dscs))
    mean_pred = float(np.mean(pred_dscs)) if pred_dscs else None
    return mean_loss, mean_seg, mean_pred


def train(
    cases: Sequence[Case],
    model: RecurrenceNet,
    schedule: TrainSchedule,
    loss_cfg: LossConfig = LossConfig(),
    mode: str = "full",
    divergence: str = "kl",
    epoch_callback: Callable[[RecurrenceNet, dict], bool] | None = None,
    log_path=None,
) -> TrainResult:
    """Train in place and leave the model at its best-validation weights.

    The learning rate halves after ``plateau_patience`` epochs without a
    validation-loss improvement; training stops early after
    ``early_stop_patience`` such epochs. The per-epoch JSON log records
    {epoch, lr, train_loss, val_loss, val_dsc_seg, val_dsc_pred}.
    """
    tensors = prepare_tensors(cases, model.config.input_size)
    train_t, val_t = validation_carveout(tensors, schedule.val_fraction)

    trainable = []
    for name, p in model.named_parameters():
        frozen = schedule.freeze_encoders and any(
            name.startswith(pref + ".") for pref in ENCODER_SUBTREES
        )
        p.requires_grad_(not frozen)
        if not frozen:
            trainable.append(p)
    optimizer = torch.optim.Adam(trainable, lr=schedule.lr)

    rng = np.random.default_rng(schedule.seed)
    lr = schedule.lr
    result = TrainResult()
    best_state = None
    since_best = 0
    log_file = open(log_path, "w") if log_path else None

    try:
        model.train()
        for epoch in range(1, schedule.max_epochs + 1):
            for group in optimizer.param_groups:
                group["lr"] = lr
            perm = rng.permutation(len(train_t))
            epoch_losses = []
            for start in range(0, len(train_t), schedule.batch_size):
                batch = train_t.subset(perm[start : start + schedule.batch_size])
                optimizer.zero_grad()
                loss, _ = _batch_losses(model, batch, loss_cfg, mode, divergence)
                if not torch.isfinite(loss):
                    raise TrainingDivergedError(
                        f"non-finite loss at epoch {epoch} (lr={lr}); aborting"
                    )
                loss.backward()
                torch.nn.utils.clip_grad_norm_(trainable, schedule.grad_clip_norm)
                optimizer.step()
                epoch_losses.append(loss.detach().item() * len(batch))
            train_loss = sum(epoch_losses) / len(train_t)

            val_loss, val_dsc_seg, val_dsc_pred = _evaluate_split(
                model, val_t, loss_cfg, mode, divergence, schedule.batch_size
            )
            if not math.isfinite(val_loss):
                raise TrainingDivergedError(f"non-finite validation loss at epoch {epoch}")

            record = {
                "epoch": epoch,
                "lr": lr,
                "train_loss": train_loss,
                "val_loss": val_loss,
                "val_dsc_seg": val_dsc_seg,
                "val_dsc_pred": val_dsc_pred,
            }
            result.log.append(record)
            if log_file:
                log_file.write(json.dumps(record) + "\n")
                log_file.flush()

            if val_loss < result.best_val_loss:
                result.best_val_loss = val_loss
                result.best_epoch = epoch
                best_state = copy.deepcopy(model.state_dict())
                since_best = 0
            else:
                since_best += 1
                if since_best % schedule.plateau_patience == 0:
                    lr *= schedule.plateau_factor
                if since_best >= schedule.early_stop_patience:
                    result.stopped_early = True
                    break

            if epoch_callback is not None and epoch_callback(model, record):
                break
    finally:
        if log_file:
            log_file.close()

    if best_state is not None:
        model.load_state_dict(best_state)
    model.eval()
    return result


def pretrain(
    cases: Sequence[Case],
    config: NetworkConfig,
    schedule: TrainSchedule,
    loss_cfg: LossConfig = LossConfig(),
    epoch_callback: Callable[[RecurrenceNet, dict], bool] | None = None,
    log_path=None,
) -> tuple[RecurrenceNet, TrainResult]:
    """Train the segmentation-only variant (no prediction decoder, no
    correlation module; fusion included)."""
    variant = ModelVariant(include_prediction=False, correlation_form="off", use_fusion=True)
    model = build_model(config, variant, seed=schedule.seed)
    result = train(
        cases,
        model,
        schedule,
        loss_cfg,
        mode="pretrain",
        epoch_callback=epoch_callback,
        log_path=log_path,
    )
    return model, result


def build_transfer_model(
    ckpt: Checkpoint,
    config: NetworkConfig,
    variant: ModelVariant = ModelVariant(),
    seed: int = 0,
    transfer_fusion: bool = True,
) -> tuple[RecurrenceNet, list[str]]:
    """Fresh full model with encoder (and optionally fusion) leaves copied
    from a pretraining checkpoint; decoders and correlation module keep
    their fresh initialization. Nothing is frozen here."""
    model = build_model(config, variant, seed=seed)
    prefixes = ENCODER_SUBTREES + (("fusion",) if transfer_fusion and variant.use_fusion else ())
    copied = restore_subtrees(model, ckpt, prefixes)
    return model, copied


def predict_cases(model: RecurrenceNet, cases: Sequence[Case], batch_size: int = 8):
    """Yield (case_id, seg_prob, pred_prob_or_None) as float32 numpy maps."""
    tensors = prepare_tensors(cases, model.config.input_size)
    mode = "full" if model.decoder_pred is not None else "pretrain"
    model.eval()
    with torch.no_grad():
        for start in range(0, len(tensors), batch_size):
            batch = tensors.subset(range(start, min(start + batch_size, len(tensors))))
            out = model(batch.flair, batch.t1c, mode=mode)
            for i, cid in enumerate(batch.ids):
                seg = out.seg_map[i].numpy().astype(np.float32)
                pred = out.pred_map[i].numpy().astype(np.float32) if out.pred_map is not None else None
                yield cid, seg, pred


def evaluate(cases: Sequence[Case], model: RecurrenceNet, batch_size: int = 8) -> metrics.MetricReport:
    """Forward, binarize at 0.5, and compute per-case metrics for both
    tasks. The prediction task is marked not applicable for
    pretrain-shaped models."""
    ordered = sorted(cases, key=lambda c: c.id)
    size = model.config.input_size
    pre = {c.id: preprocess_case(c, size) for c in ordered}
    seg_rows = []
    pred_rows = [] if model.decoder_pred is not None else None
    for cid, seg_prob, pred_prob in predict_cases(model, ordered, batch_size):
        case = pre[cid]
        seg_rows.append(metrics.case_metrics(cid, metrics.binarize(seg_prob), case.tumor_mask_t1))
        if pred_rows is not None:
            pred_rows.append(
                metrics.case_metrics(cid, metrics.binarize(pred_prob), case.recurrence_mask_t2)
            )
    return metrics.aggregate_report(seg_rows, pred_rows)


def dataset_dice(model: RecurrenceNet, cases: Sequence[Case], batch_size: int = 8) -> tuple[float, float | None]:
    """Mean per-case DSC over a dataset for both heads."""
    report = evaluate(cases, model, batch_size)
    seg = report.aggregate("segmentation").dsc_pct / 100.0
    pred_agg = report.aggregate("prediction")
    pred = pred_agg.dsc_pct / 100.0 if pred_agg.applicable else None
    return seg, pred


def write_log(log: list[dict], path) -> None:
    Path(path).write_text("\n".join(json.dumps(rec) for rec in log) + "\n")


def read_log(path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]
