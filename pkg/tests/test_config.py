from __future__ import annotations

import pytest

from spectronet.config import ConfigError, RunConfig


class TestRoundTrip:
    def test_defaults(self):
        cfg = RunConfig()
        assert RunConfig.from_toml(cfg.to_toml()) == cfg

    def test_edited_values(self, tmp_path):
        cfg = RunConfig(seed=5)
        cfg.model.family, cfg.model.preset = "resnet", "18"
        cfg.transfer.tasks = ["sc_lr2"]
        cfg.ablation.fractions = [0.5, 1.0]
        cfg.save(tmp_path / "c.toml")
        assert RunConfig.load(tmp_path / "c.toml") == cfg

    def test_defaults_match_training_recipe(self):
        cfg = RunConfig()
        assert (cfg.train.lr, cfg.train.momentum, cfg.train.patience, cfg.train.max_epochs) == (0.01, 0.9, 10, 500)
        assert (cfg.transfer.head_lr, cfg.transfer.head_weight_decay, cfg.transfer.body_lr) == (0.005, 1e-4, 0.001)
        assert cfg.transfer.epochs == 100 and cfg.ablation.iterations == 5
        assert cfg.ablation.fractions == [0.25, 0.5, 0.75, 1.0]
        assert (cfg.features.sample_rate, cfg.features.frame_length, cfg.features.hop_length, cfg.features.n_mels) == (22050, 1024, 512, 64)

    def test_partial_file(self):
        cfg = RunConfig.from_toml("seed = 4\n[train]\nlr = 1\n")
        assert cfg.seed == 4 and cfg.train.lr == 1.0 and isinstance(cfg.train.lr, float)
        assert cfg.train.batch_size == 64


class TestRejection:
    @pytest.mark.parametrize(
        "text,match",
        [
            ("sed = 1\n", "sed"),
            ("[train]\nlearning_rate = 0.1\n", "learning_rate"),
            ("[optimizer]\nlr = 0.1\n", "optimizer"),
        ],
    )
    def test_unknown_keys(self, text, match):
        with pytest.raises(ConfigError, match=match):
            RunConfig.from_toml(text)

    @pytest.mark.parametrize(
        "text",
        [
            'seed = "1"\n',
            "seed = true\n",
            "[train]\nbatch_size = 1.5\n",
            "[features]\nlog_compress = 1\n",
            '[transfer]\ntasks = "sc_lr2"\n',
            "[ablation]\nfractions = [0.5, \"x\"]\n",
            "train = 3\n",
        ],
    )
    def test_wrong_types(self, text):
        with pytest.raises(ConfigError):
            RunConfig.from_toml(text)

    def test_invalid_toml(self):
        with pytest.raises(ConfigError, match="TOML"):
            RunConfig.from_toml("seed = = 1")

    @pytest.mark.parametrize(
        "text",
        [
            '[model]\nfamily = "vgg"\n',
            '[model]\npreset = "999"\n',
            '[transfer]\ntasks = ["sc_5"]\n',
            "[ablation]\nfractions = [0.0]\n",
            "[ablation]\niterations = 0\n",
            "[train]\ntest_folds = [11]\n",
            "[train]\nbatch_size = 0\n",
            "jobs = 0\n",
            "[features]\nhop_length = 0\n",
        ],
    )
    def test_invalid_values(self, text):
        with pytest.raises(ConfigError):
            RunConfig.from_toml(text).resolved()


class TestDesk:
    def test_scaling(self):
        cfg = RunConfig(desk=True).resolved()
        assert not cfg.desk
        assert cfg.model.preset == "tiny"
        assert (cfg.train.max_epochs, cfg.train.patience, cfg.transfer.epochs) == (5, 2, 2)

    def test_floors(self):
        cfg = RunConfig(desk=True)
        cfg.train.max_epochs, cfg.train.patience, cfg.transfer.epochs = 10, 2, 3
        out = cfg.resolved()
        assert (out.train.max_epochs, out.train.patience, out.transfer.epochs) == (2, 1, 1)

    def test_sbcnn_keeps_preset(self):
        cfg = RunConfig(desk=True)
        cfg.model.family, cfg.model.preset = "sbcnn", "base"
        assert cfg.resolved().model.preset == "base"

    def test_resolution_does_not_mutate(self):
        cfg = RunConfig(desk=True)
        cfg.resolved()
        assert cfg.desk and cfg.model.preset == "121"

    def test_off_is_identity(self):
        cfg = RunConfig(seed=2)
        assert cfg.resolved() == cfg

    def test_ablation_seed_base(self):
        cfg = RunConfig(seed=9)
        assert cfg.ablation_seed_base == 9
        cfg.ablation.seed_base = 100
        assert cfg.ablation_seed_base == 100
