import json
import logging

import pytest
from pydantic import ValidationError

from app.core.config import Settings
from app.core.errors import ConfigError
from app.core.logging import log_level
from app.models.attention import ConstraintMode
from app.models.edit import GenerationStart
from app.models.run_config import RunConfig


def make_settings(**overrides) -> Settings:
    return Settings(_env_file=None, **overrides)


class TestSettings:
    def test_unknown_environment(self):
        with pytest.raises(ValidationError):
            make_settings(environment="moon")

    def test_negative_threads(self):
        with pytest.raises(ValidationError):
            make_settings(threads=-1)

    def test_explicit_worker_count(self):
        assert make_settings(threads=3).worker_count() == 3
        assert make_settings(threads=0).worker_count() >= 1

    def test_level_from_name(self):
        assert log_level(make_settings(log_level="error")) == logging.ERROR

    def test_production_floor(self):
        assert log_level(make_settings(environment="production", log_level="DEBUG")) == logging.WARNING

    def test_debug_wins(self):
        assert log_level(make_settings(debug=True, log_level="ERROR")) == logging.DEBUG
        assert log_level(make_settings(debug=True, environment="production")) == logging.DEBUG


class TestRunConfig:
    def test_section_override(self):
        config = RunConfig().with_section("edit", {"steps": 7, "mode": ConstraintMode.SOFT, "start": "noise"})
        assert config.edit.steps == 7
        assert config.edit.mode == ConstraintMode.SOFT
        assert config.edit.start == GenerationStart.NOISE
        assert config.train == RunConfig().train

    def test_empty_override_is_identity(self):
        config = RunConfig(seed=5)
        assert config.with_section("edit", {}) is config

    @pytest.mark.parametrize("update", [{"steps": 0}, {"guidance_window": 2.0}, {"w_g": -1.0}, {"bogus": 1}])
    def test_invalid_override(self, update):
        with pytest.raises(ConfigError):
            RunConfig().with_section("edit", update)

    def test_invalid_train_override(self):
        with pytest.raises(ConfigError):
            RunConfig().with_section("train", {"epochs": 0})

    def test_reads_echoed_document(self):
        config = RunConfig(seed=9).with_section("edit", {"w_g": 1.25})
        document = {"command": "edit", "config": config.echo(), "warnings": []}
        assert RunConfig.from_json(json.dumps(document)) == config

    def test_reads_plain_config(self):
        assert RunConfig.from_json(RunConfig(seed=4).dumps()).seed == 4

    def test_malformed_json(self):
        with pytest.raises(ConfigError):
            RunConfig.from_json("{not json")

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            RunConfig.load(str(tmp_path / "absent.json"))

    def test_replay_may_change_edit_settings(self):
        trained = RunConfig(seed=1)
        trained.with_section("edit", {"w_g": 7.5}).check_matches_checkpoint(trained)

    def test_replay_must_keep_model(self):
        trained = RunConfig()
        other = trained.with_section("model", {"d_model": 32})
        with pytest.raises(ConfigError):
            other.check_matches_checkpoint(trained)
