"""Flag parsing for the serve command (server loop stubbed out)."""

from __future__ import annotations

import click.testing
import pytest

from embed_bridge import cli
from embed_bridge.server import BridgeConfig


@pytest.fixture
def captured(monkeypatch: pytest.MonkeyPatch) -> list[BridgeConfig]:
    configs: list[BridgeConfig] = []
    monkeypatch.setattr(cli, "run_bridge", configs.append)
    return configs


class TestServeFlags:
    def test_help_exits_zero(self) -> None:
        result = click.testing.CliRunner().invoke(cli.main, ["--help"])
        assert result.exit_code == 0

    def test_no_models_is_a_usage_error(self, captured: list[BridgeConfig]) -> None:
        result = click.testing.CliRunner().invoke(cli.main, [])
        assert result.exit_code == 2
        assert "no models configured" in result.output
        assert captured == []

    def test_hash_fallback_flags_build_the_model_table(self, captured: list[BridgeConfig]) -> None:
        result = click.testing.CliRunner().invoke(
            cli.main,
            ["--hash-fallback", "--hash-dim", "128", "--hash-seed", "3", "--port", "9000"],
        )
        assert result.exit_code == 0
        (config,) = captured
        assert config.port == 9000
        assert set(config.models) == {"hash"}
        assert config.models["hash"].kind == "hash-fallback"
        assert config.models["hash"].dim == 128
        assert config.models["hash"].seed == 3

    def test_all_three_backends_can_be_configured(self, captured: list[BridgeConfig]) -> None:
        result = click.testing.CliRunner().invoke(
            cli.main,
            [
                "--hash-fallback",
                "--sentence-model", "st-checkpoint",
                "--sentence-dim", "384",
                "--code-model", "code-checkpoint",
                "--code-dim", "768",
                "--batch-cap", "64",
            ],
        )
        assert result.exit_code == 0
        (config,) = captured
        assert set(config.models) == {"hash", "sentence", "code"}
        assert config.models["sentence"].model_id == "st-checkpoint"
        assert config.models["code"].dim == 768
        assert config.batch_cap == 64
