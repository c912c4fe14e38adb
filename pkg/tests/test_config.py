"""Preset resolution, schema validation, and parameter construction."""

import pytest

from symstdp.config import (
    DEFAULTS,
    PRESETS,
    ConfigError,
    encoding_params_from_run,
    load_config_file,
    network_config_from_run,
    preset_names,
    resolve_config,
    sim_params_from_run,
    validate_config,
    write_config,
)


class TestResolution:
    def test_defaults_pass_validation(self):
        cfg = resolve_config()
        assert cfg["dataset"] == "mnist"
        assert cfg["epochs"] == 3
        assert cfg["theta"]["tau_theta"] == 6.0e6

    def test_every_preset_resolves(self):
        for name in preset_names():
            cfg = resolve_config(preset=name)
            assert cfg["preset"] == name
            assert cfg["n_hidden"] == int(name.rsplit("n", 1)[1])

    def test_preset_epoch_budgets_grow_with_size(self):
        epochs = [resolve_config(preset=f"mnist-n{n}")["epochs"]
                  for n in (100, 400, 1600, 6400, 10000)]
        assert epochs == [3, 5, 7, 10, 20]

    def test_size_dependent_threshold_constants(self):
        big = resolve_config(preset="mnist-n6400")
        assert big["theta"]["tau_theta"] == 2.0e7
        assert big["theta"]["alpha"] == 2.0e6
        small = resolve_config(preset="mnist-n1600")
        assert small["theta"]["tau_theta"] == 8.0e6
        assert small["theta"]["alpha"] == 1.12e6

    def test_fashion_presets_use_their_own_scaling(self):
        assert resolve_config(preset="fashion-n400")["beta"] == 0.05
        assert resolve_config(preset="fashion-n6400")["beta"] == 0.025
        assert resolve_config(preset="fashion-n400")["dataset"] == "fashion-mnist"

    def test_unknown_preset_lists_available(self):
        with pytest.raises(ConfigError, match="mnist-n100"):
            resolve_config(preset="mnist-n9999")

    def test_file_overrides_preset(self):
        cfg = resolve_config(preset="mnist-n400", file_config={"epochs": 2})
        assert cfg["epochs"] == 2
        assert cfg["n_hidden"] == 400

    def test_overrides_beat_file(self):
        cfg = resolve_config(
            file_config={"epochs": 2, "seed": 5}, overrides={"epochs": 9}
        )
        assert cfg["epochs"] == 9
        assert cfg["seed"] == 5

    def test_nested_merge_keeps_siblings(self):
        cfg = resolve_config(
            preset="mnist-n400", overrides={"theta": {"tau_theta": 1.0e6}}
        )
        assert cfg["theta"]["tau_theta"] == 1.0e6
        assert cfg["theta"]["alpha"] == 8.4e5  # untouched sibling

    def test_preset_can_come_from_the_file(self):
        cfg = resolve_config(file_config={"preset": "fashion-n400"})
        assert cfg["dataset"] == "fashion-mnist"
        assert cfg["n_hidden"] == 400

    def test_defaults_are_never_mutated(self):
        before = DEFAULTS["theta"]["tau_theta"]
        cfg = resolve_config(overrides={"theta": {"tau_theta": 1.0}})
        assert cfg["theta"]["tau_theta"] == 1.0
        assert DEFAULTS["theta"]["tau_theta"] == before


class TestValidation:
    def test_typo_key_is_rejected_with_location(self):
        with pytest.raises(ConfigError, match="top level"):
            resolve_config(file_config={"epohcs": 3})

    def test_nested_typo_reports_path(self):
        with pytest.raises(ConfigError, match="theta"):
            resolve_config(file_config={"theta": {"tau": 1.0}})

    def test_wrong_type_rejected(self):
        with pytest.raises(ConfigError, match="epochs"):
            resolve_config(file_config={"epochs": "three"})

    def test_unknown_dataset_rejected(self):
        with pytest.raises(ConfigError, match="dataset"):
            resolve_config(file_config={"dataset": "cifar10"})

    def test_direct_topology_requires_simultaneous(self):
        with pytest.raises(ConfigError, match="hidden block"):
            resolve_config(
                file_config={"hidden_blocks": 0, "mode": "layer_by_layer"}
            )

    def test_hidden_block_needs_neurons(self):
        with pytest.raises(ConfigError, match="n_hidden"):
            resolve_config(file_config={"n_hidden": 0})

    def test_validate_is_exposed_directly(self):
        cfg = resolve_config()
        validate_config(cfg)
        cfg["beta"] = -1
        with pytest.raises(ConfigError, match="beta"):
            validate_config(cfg)


class TestFileRoundTrip:
    def test_write_then_load(self, tmp_path):
        cfg = resolve_config(preset="mnist-n100", overrides={"seed": 7})
        path = tmp_path / "run.json"
        write_config(path, cfg)
        assert resolve_config(file_config=load_config_file(path)) == cfg

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            load_config_file(tmp_path / "nope.json")

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        with pytest.raises(ConfigError, match="JSON"):
            load_config_file(path)

    def test_non_object_json(self, tmp_path):
        path = tmp_path / "list.json"
        path.write_text("[1, 2]")
        with pytest.raises(ConfigError, match="object"):
            load_config_file(path)


class TestParameterConstruction:
    def test_network_config_carries_run_values(self):
        cfg = resolve_config(preset="fashion-n400", overrides={"seed": 3})
        net = network_config_from_run(cfg, n_input=784, n_labels=10)
        assert net.n_input == 784
        assert net.n_hidden == 400
        assert net.seed == 3
        assert net.theta_exc.tau_theta == 5.0e7
        assert net.theta_exc.alpha == 5.0e6
        assert net.theta_exc.enabled
        assert net.scaling_in.beta == 0.05
        assert net.scaling_out.beta == 0.8

    def test_readout_scaling_independent_of_feature_scaling(self):
        cfg = resolve_config(overrides={"beta": 0.2, "beta_out": 0.5})
        net = network_config_from_run(cfg, n_input=784, n_labels=10)
        assert net.scaling_in.beta == 0.2
        assert net.scaling_out.beta == 0.5

    def test_sim_params(self):
        cfg = resolve_config(overrides={"sim": {"t_present": 100.0,
                                                "retry_in_eval": False}})
        sim = sim_params_from_run(cfg)
        assert sim.t_present == 100.0
        assert sim.t_rest == 150.0
        assert not sim.retry_in_eval

    def test_encoding_dt_follows_sim_dt(self):
        cfg = resolve_config(overrides={"sim": {"dt": 0.25}})
        enc = encoding_params_from_run(cfg)
        assert enc.dt == 0.25

    def test_preset_values_match_published_tables(self):
        # guard against silent edits to the preset table
        assert PRESETS["mnist-n100"]["theta"] == {"tau_theta": 6.0e6, "alpha": 8.4e5}
        assert PRESETS["mnist-n10000"]["theta"] == {"tau_theta": 2.0e7, "alpha": 2.0e6}
        assert PRESETS["fashion-n6400"]["beta"] == 0.025
