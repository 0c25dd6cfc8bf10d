import json

import pytest

from dasksvd.config import PipelineConfig, write_default
from dasksvd.errors import ConfigError


class TestDefaults:
    def test_values(self):
        cfg = PipelineConfig()
        assert (cfg.segmentation.length, cfg.segmentation.overlap) == (128, 0.75)
        assert (cfg.das.iterations, cfg.das.samples_per_class, cfg.das.tau1, cfg.das.tau2) == (20, 500, 0.5, 0.1)
        assert (cfg.measure.alpha, cfg.measure.beta) == (0.33, 0.17)
        assert cfg.mlp.hidden == 500 and cfg.screen.threshold == 15.0
        cfg.validate()

    def test_module_configs_carry_seed(self):
        cfg = PipelineConfig(seed=7)
        assert cfg.ksvd_config().seed == 7
        assert cfg.das_config().seed == 7 and cfg.das_config().ksvd.seed == 7
        assert cfg.train_config().seed == 7
        assert cfg.selection_config("dcaf").measure == "dcaf"


class TestLoad:
    def test_round_trip(self, tmp_path):
        write_default(tmp_path / "c.json")
        assert PipelineConfig.load(tmp_path / "c.json") == PipelineConfig()

    def test_partial_document(self):
        cfg = PipelineConfig.from_json({"das": {"iterations": 5}, "seed": 2})
        assert cfg.das.iterations == 5 and cfg.das.tau1 == 0.5 and cfg.seed == 2

    def test_unknown_key(self):
        with pytest.raises(ConfigError):
            PipelineConfig.from_json({"das": {"iteration": 5}})

    def test_type_checked(self):
        with pytest.raises(ConfigError):
            PipelineConfig.from_json({"mlp": {"hidden": 2.5}})
        with pytest.raises(ConfigError):
            PipelineConfig.from_json({"ksvd": {"replace_weak_atoms": 1}})

    @pytest.mark.parametrize("doc", [
        {"measure": {"alpha": 0.8, "beta": 0.3}},
        {"das": {"tau1": 1.0}},
        {"segmentation": {"overlap": 1.0}},
        {"ksvd": {"sparsity": 200}},
        {"das": {"samples_per_class": 9000}},
        {"screen": {"threshold": -1}},
    ])
    def test_domain_validated(self, doc):
        with pytest.raises(ConfigError):
            PipelineConfig.from_json(doc)

    def test_bad_json(self, tmp_path):
        (tmp_path / "c.json").write_text("{nope")
        with pytest.raises(ConfigError):
            PipelineConfig.load(tmp_path / "c.json")

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            PipelineConfig.load(tmp_path / "none.json")


class TestOverride:
    def test_flags_win(self):
        cfg = PipelineConfig().override(["das.iterations=3", "seed=5", "measure.alpha=0.5"])
        assert cfg.das.iterations == 3 and cfg.seed == 5 and cfg.measure.alpha == 0.5

    @pytest.mark.parametrize("item", ["das.iterations", "nope.x=1", "das.nope=1", "das.iterations=0"])
    def test_rejected(self, item):
        with pytest.raises(ConfigError):
            PipelineConfig().override([item])

    def test_dumps_is_json(self):
        assert json.loads(PipelineConfig().dumps())["das"]["iterations"] == 20
