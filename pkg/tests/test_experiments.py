import pytest

from recurseg.checkpoint import load_checkpoint, save_checkpoint
from recurseg.data import DataError
from recurseg.experiments import (
    ExperimentSpec,
    component_specs,
    correlation_form_specs,
    divergence_specs,
    epochs_to_target,
    overfit_experiment,
    run_ablation,
    run_experiment,
    transfer_benefit_experiment,
)
from recurseg.losses import LossConfig
from recurseg.network import build_model
from recurseg.training import TrainSchedule, pretrain


def quick_schedule(**kw):
    base = dict(lr=1e-3, max_epochs=1, batch_size=4, seed=0)
    base.update(kw)
    return TrainSchedule(**base)


class TestExperimentSpec:
    def test_correlation_off_forbids_divergence(self):
        with pytest.raises(DataError):
            ExperimentSpec("bad", correlation="off", divergence="kl")
        ExperimentSpec("ok", correlation="off", divergence=None)

    def test_active_correlation_requires_valid_divergence(self):
        with pytest.raises(DataError):
            ExperimentSpec("bad", correlation="nonlinear", divergence=None)
        with pytest.raises(DataError):
            ExperimentSpec("bad", correlation="nonlinear", divergence="js")

    def test_unknown_mode_rejected(self):
        with pytest.raises(DataError):
            ExperimentSpec("bad", mode="zero_shot")

    def test_spec_factories_have_table_rows(self):
        assert [s.label for s in component_specs()] == [
            "Baseline",
            "Baseline + MMFF",
            "Baseline + MMFF + Correlation learning",
        ]
        assert [s.label for s in divergence_specs()] == [
            "Kullback-Leibler",
            "Jeffreys",
            "squared Hellinger",
        ]
        assert [s.label for s in correlation_form_specs()] == ["Linear", "Non-linear"]

    def test_baseline_disables_fusion_and_correlation(self):
        base = component_specs()[0]
        variant = base.variant()
        assert not variant.use_fusion and variant.correlation_form == "off"


class TestRunAblation:
    def test_table_structure_and_failure_recording(self, synth_small, tiny_config, tmp_path):
        specs = correlation_form_specs()
        result = run_ablation(
            specs,
            "correlation_expression",
            synth_small[:5],
            synth_small[5:],
            tiny_config,
            quick_schedule(),
        )
        assert [(r.label, r.task) for r in result.rows] == [
            ("Linear", "Segmentation"),
            ("Linear", "Prediction"),
            ("Non-linear", "Segmentation"),
            ("Non-linear", "Prediction"),
        ]
        assert not result.failures
        result.to_tsv(tmp_path / "t.tsv")
        lines = (tmp_path / "t.tsv").read_text().strip().splitlines()
        assert lines[0].split("\t") == [
            "correlation_expression",
            "task",
            "dsc_pct",
            "hd_px",
            "sensitivity_pct",
        ]
        assert len(lines) == 5

    def test_per_spec_failure_does_not_kill_run(self, synth_small, tiny_config):
        # transfer without a checkpoint fails for that spec only
        specs = [
            ExperimentSpec("works", correlation="off", divergence=None),
            ExperimentSpec("broken", mode="transfer"),
        ]
        result = run_ablation(
            specs, "methods", synth_small[:5], synth_small[5:], tiny_config, quick_schedule()
        )
        assert set(result.failures) == {"broken"}
        broken_rows = [r for r in result.rows if r.label == "broken"]
        assert len(broken_rows) == 2 and all(r.dsc_pct is None for r in broken_rows)
        works_rows = [r for r in result.rows if r.label == "works"]
        assert all(r.dsc_pct is not None for r in works_rows)


class TestModes:
    def test_pretrained_test_is_zero_shot_segmentation(self, synth_small, tiny_config, tmp_path):
        model, _ = pretrain(synth_small, tiny_config, quick_schedule(max_epochs=2))
        ckpt = load_checkpoint(save_checkpoint(tmp_path / "p.npz", model))
        spec = ExperimentSpec("zero-shot", mode="pretrained_test", correlation="off", divergence=None)
        report, result = run_experiment(
            spec, synth_small[:5], synth_small[5:], tiny_config, quick_schedule(), checkpoint=ckpt
        )
        assert result is None  # no training happened
        assert report.aggregate("segmentation").applicable
        assert not report.aggregate("prediction").applicable

    def test_transfer_mode_requires_checkpoint(self, synth_small, tiny_config):
        spec = ExperimentSpec("t", mode="transfer")
        with pytest.raises(DataError):
            run_experiment(spec, synth_small[:5], synth_small[5:], tiny_config, quick_schedule())


class TestEpochCounting:
    def test_epochs_to_target_reports_first_hit(self, synth_small, tiny_config):
        model = build_model(tiny_config, seed=0)
        epochs = epochs_to_target(
            synth_small, model, quick_schedule(max_epochs=3), LossConfig(), target_dsc=0.0
        )
        assert epochs == 1

    def test_epochs_to_target_caps_at_max_plus_one(self, synth_small, tiny_config):
        model = build_model(tiny_config, seed=1)
        schedule = quick_schedule(max_epochs=2)
        epochs = epochs_to_target(synth_small, model, schedule, LossConfig(), target_dsc=1.01)
        assert epochs == schedule.max_epochs + 1

    def test_transfer_benefit_machinery(self, synth_small, tiny_config, tmp_path):
        model, _ = pretrain(synth_small, tiny_config, quick_schedule(max_epochs=2))
        ckpt = load_checkpoint(save_checkpoint(tmp_path / "p.npz", model))
        result = transfer_benefit_experiment(
            ckpt,
            synth_small,
            tiny_config,
            quick_schedule(max_epochs=2),
            seeds=(0, 1),
            target_dsc=0.0,
        )
        assert result.epochs_direct == [1, 1] and result.epochs_transfer == [1, 1]
        assert result.transfer_not_slower

    def test_overfit_experiment_stops_on_targets(self, synth_small, tiny_config):
        model, result = overfit_experiment(
            synth_small,
            tiny_config,
            quick_schedule(max_epochs=4),
            seg_target=0.0,
            pred_target=0.0,
            probe_every=1,
        )
        assert result.target_epoch == 1
        assert result.epochs_run == 1
        assert 0 <= result.seg_dsc <= 1
