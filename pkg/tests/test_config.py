"""Tests for TOML run configuration loading."""

import unittest
from pathlib import Path

import pytest

from latent_edit.config import RunConfig, load_config, parse_config
from latent_edit.denoisers import SOURCE, TARGET
from latent_edit.errors import ConfigError
from latent_edit.latent import sample_gaussian
from latent_edit.latent_io import write_latent
from latent_edit.similarity import SharpenParams

FULL_CONFIG = """
[sampler]
kind = "rf"
steps = 6
seed = 11
rf_shift = 2

[fusion]
mode = "inversion_free"
alpha_mix = 0.25
gamma = 50
lambda = 0.05
block_size = 2
alpha_init = 0.6

[scenario]
height = 12
width = 12
mask = [2, 2, 6, 6]
seed = 5
background_drift = 0.5

[output]
directory = "runs/a"
export_maps = true
log_level = "debug"
"""


class TestParseConfig(unittest.TestCase):
    def test_defaults(self):
        config = parse_config({})
        self.assertEqual(config.fusion.sampler, "ddim")
        self.assertEqual(config.fusion.steps, 15)
        self.assertEqual(config.fusion.sharpen, SharpenParams())
        self.assertEqual(config.scenario.mask, (4, 4, 12, 12))
        self.assertEqual(config.output.log_level, "INFO")

    def test_unknown_key_named(self):
        with self.assertRaises(ConfigError) as ctx:
            parse_config({"fusion": {"gama": 10.0}})
        self.assertIn("fusion.gama", str(ctx.exception))
        with self.assertRaises(ConfigError) as ctx:
            parse_config({"model": {}})
        self.assertIn("'model'", str(ctx.exception))

    def test_type_errors(self):
        with self.assertRaises(ConfigError):
            parse_config({"sampler": {"steps": "ten"}})
        with self.assertRaises(ConfigError):
            parse_config({"fusion": {"block_size": True}})
        with self.assertRaises(ConfigError):
            parse_config({"scenario": {"mask": [1, 2, 3]}})

    def test_domain_errors_become_config_errors(self):
        with self.assertRaises(ConfigError):
            parse_config({"fusion": {"gamma": -1.0}})
        with self.assertRaises(ConfigError):
            parse_config({"sampler": {"kind": "heun"}})
        with self.assertRaises(ConfigError):
            parse_config({"scenario": {"mask": [0, 0, 40, 40]}})
        with self.assertRaises(ConfigError):
            parse_config({"output": {"log_level": "LOUD"}})

    def test_with_fusion_overrides(self):
        config = RunConfig().with_fusion(sampler="rf", steps=None)
        self.assertEqual(config.fusion.steps, 8)
        with self.assertRaises(ConfigError):
            RunConfig().with_fusion(unknown=1)


def test_load_full_config(tmp_path):
    path = tmp_path / "run.toml"
    path.write_text(FULL_CONFIG)
    config = load_config(path)
    fusion = config.fusion
    assert (fusion.sampler, fusion.steps, fusion.seed, fusion.rf_shift) == ("rf", 6, 11, 2.0)
    assert fusion.mode == "inversion_free"
    assert fusion.sharpen == SharpenParams(gamma=50.0, lam=0.05)
    assert (fusion.alpha_mix, fusion.block_size, fusion.alpha_init) == (0.25, 2, 0.6)
    assert config.scenario.shape.as_tuple() == (4, 12, 12)
    assert config.scenario.background_drift == 0.5
    assert config.output.directory == tmp_path.resolve() / "runs" / "a"
    assert config.output.export_maps is True
    assert config.output.log_level == "DEBUG"
    assert config.path == path
    assert config.fusion.schedule().num_steps == 6


def test_load_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.toml")
    broken = tmp_path / "broken.toml"
    broken.write_text("[fusion\ngamma = 1")
    with pytest.raises(ConfigError):
        load_config(broken)


def test_file_backed_conditions(tmp_path):
    shape = (2, 4, 4)
    write_latent(tmp_path / "z0.lted", sample_gaussian(shape, 1))
    write_latent(tmp_path / "src.lted", sample_gaussian(shape, 2))
    write_latent(tmp_path / "tgt_a.lted", sample_gaussian(shape, 3))
    write_latent(tmp_path / "tgt_b.lted", sample_gaussian(shape, 4))
    path = tmp_path / "mix.toml"
    path.write_text(
        """
[scenario]
source_latent = "z0.lted"
mask = [0, 0, 2, 2]

[[scenario.conditions.source.components]]
mean = "src.lted"
variance = 0.1

[[scenario.conditions.target.components]]
mean = "tgt_a.lted"
weight = 0.5

[[scenario.conditions.target.components]]
mean = "tgt_b.lted"
weight = 0.5
"""
    )
    config = load_config(path)
    assert config.source_latent == tmp_path.resolve() / "z0.lted"
    scenario = config.build_scenario()
    assert scenario.z0_source.shape.as_tuple() == shape
    assert len(scenario.denoiser.components(TARGET)) == 2
    assert scenario.denoiser.components(SOURCE)[0].variance == 0.1
    assert int(scenario.region.sum()) == 4


def test_conditions_require_both_and_source_latent(tmp_path):
    with pytest.raises(ConfigError):
        parse_config({"scenario": {"conditions": {"source": {"components": [{"mean": "a.lted"}]}}}}, Path("."))
    config = parse_config({
        "scenario": {
            "conditions": {
                "source": {"components": [{"mean": "a.lted"}]},
                "target": {"components": [{"mean": "b.lted"}]},
            }
        }
    })
    with pytest.raises(ConfigError):
        config.build_scenario()
    with pytest.raises(ConfigError):
        parse_config({"scenario": {"conditions": {"source": {"components": [{"mean": "a", "colour": 1}]}}}})
