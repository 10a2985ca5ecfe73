import pytest

from voxelpaint import config as cf


class TestResolve:
    def test_defaults_fill_in(self):
        cfg = cf.resolve_config({"variant": "2d_slice"})
        assert cfg["seed"] == 42
        assert cfg["schedule"]["T"] == 200
        assert cfg["dataset"]["shape"] == [16, 32, 32]
        assert "codec" not in cfg

    def test_volumetric_defaults(self):
        cfg = cf.resolve_config({"variant": "3d"})
        assert cfg["dataset"]["shape"] == [32, 32, 32]
        assert cfg["training"]["crop"] == [16, 16, 16]

    def test_latent_gets_codec_section(self):
        cfg = cf.resolve_config({"variant": "latent3d"})
        assert cfg["codec"]["codebook_size"] == 8
        assert cfg["codec"]["factor"] == 4

    def test_wavelet_predicts_x0(self):
        cfg = cf.resolve_config({"variant": "wavelet3d"})
        assert cfg["schedule"]["prediction_target"] == "x0"
        assert cf.resolve_config({"variant": "3d"})["schedule"]["prediction_target"] == "epsilon"

    def test_unknown_top_level_key_rejected(self):
        with pytest.raises(cf.ConfigError, match="unknown keys"):
            cf.resolve_config({"variant": "3d", "lerning_rate": 1e-4})

    def test_unknown_nested_key_rejected(self):
        with pytest.raises(cf.ConfigError, match="config.training.*unknown"):
            cf.resolve_config({"variant": "3d", "training": {"iter": 10}})

    def test_missing_variant_rejected(self):
        with pytest.raises(cf.ConfigError, match="variant"):
            cf.resolve_config({})

    def test_codec_outside_latent_rejected(self):
        with pytest.raises(cf.ConfigError, match="codec"):
            cf.resolve_config({"variant": "3d", "codec": {"factor": 4}})

    def test_type_errors_carry_paths(self):
        with pytest.raises(cf.ConfigError, match="config.schedule.T"):
            cf.resolve_config({"variant": "3d", "schedule": {"T": "many"}})

    def test_partial_beta_endpoints_rejected(self):
        with pytest.raises(cf.ConfigError, match="both beta"):
            cf.resolve_config({"variant": "3d", "schedule": {"beta_start": 1e-4}})


class TestHash:
    def test_stable_and_sensitive(self):
        a = cf.resolve_config({"variant": "3d"})
        b = cf.resolve_config({"variant": "3d"})
        c = cf.resolve_config({"variant": "3d", "seed": 43})
        assert cf.config_hash(a) == cf.config_hash(b)
        assert cf.config_hash(a) != cf.config_hash(c)
        assert len(cf.config_hash(a)) == 64


class TestDerived:
    def test_schedule_round_trip_fields(self):
        cfg = cf.resolve_config({"variant": "3d", "schedule": {
            "T": 10, "beta_start": 0.01, "beta_end": 0.2}})
        sched = cf.schedule_from_config(cfg)
        assert sched.to_config() == {"T": 10, "beta_start": 0.01,
                                     "beta_end": 0.2, "sigma_mode": "beta",
                                     "prediction_target": "epsilon"}

    def test_denoiser_channels_derived(self):
        for variant, cin, cout in [("2d_slice", 3, 1), ("2d_seqpos", 4, 1),
                                   ("pseudo3d", 3, 1), ("3d", 3, 1),
                                   ("wavelet3d", 24, 8), ("latent3d", 12, 4)]:
            cfg = cf.resolve_config({"variant": variant})
            net_cfg = cf.denoiser_config_from(cfg)
            assert (net_cfg.in_channels, net_cfg.out_channels) == (cin, cout), variant
