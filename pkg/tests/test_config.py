import pytest

from recurseg.config import (
    ConfigError,
    DEFAULTS,
    divergence,
    load_config_file,
    loss_config,
    model_variant,
    network_config,
    resolve,
    train_schedule,
    write_resolved,
)


class TestConfigFile:
    def test_defaults_resolve_to_typed_objects(self):
        cfg = resolve()
        net = network_config(cfg)
        assert net.levels == 4 and net.base_channels == 16 and net.input_size == 128
        sched = train_schedule(cfg)
        assert sched.lr == 5e-4 and sched.plateau_patience == 10
        assert sched.early_stop_patience == 50 and sched.max_epochs == 500
        loss = loss_config(cfg)
        assert loss.phi == 0.1 and loss.epsilon == 1e-5
        assert divergence(cfg) == "kl"
        assert model_variant(cfg).correlation_form == "nonlinear"

    def test_file_values_and_overrides(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("loss.phi = 0.3\n# comment\ntrain.seed = 7\n")
        cfg = resolve(load_config_file(path), {"train.seed": "9"})
        assert loss_config(cfg).phi == 0.3
        assert train_schedule(cfg).seed == 9

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("optimizer.name = sgd\n")
        with pytest.raises(ConfigError):
            load_config_file(path)
        with pytest.raises(ConfigError):
            resolve(overrides={"nope": "1"})

    def test_malformed_line_rejected(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("just words\n")
        with pytest.raises(ConfigError):
            load_config_file(path)

    def test_bad_value_types_rejected(self):
        with pytest.raises(ConfigError):
            train_schedule(resolve(overrides={"train.max_epochs": "many"}))
        with pytest.raises(ConfigError):
            model_variant(resolve(overrides={"correlation.form": "cubic"}))
        with pytest.raises(ConfigError):
            train_schedule(resolve(overrides={"train.freeze_encoders": "maybe"}))

    def test_resolved_file_roundtrip(self, tmp_path):
        cfg = resolve(overrides={"loss.phi": "0.25", "network.levels": "3", "network.input_size": "32"})
        path = write_resolved(cfg, tmp_path)
        assert path.name == "resolved-config.txt"
        assert resolve(load_config_file(path)) == cfg

    def test_every_default_key_is_parseable(self):
        cfg = resolve()
        assert set(cfg) == set(DEFAULTS)
        network_config(cfg)
        train_schedule(cfg)
        loss_config(cfg)
        model_variant(cfg)
