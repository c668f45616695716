"""Command line entry point: configure models and serve the bridge."""

from __future__ import annotations

import sys

import click

from .server import DEFAULT_BATCH_CAP, BridgeConfig, ModelSpec, run_bridge


@click.command(name="embed-bridge")
@click.option("--host", default="127.0.0.1", show_default=True, help="Bind address.")
@click.option("--port", type=click.IntRange(min=1, max=65535), default=8200, show_default=True)
@click.option(
    "--batch-cap",
    type=click.IntRange(min=1),
    default=DEFAULT_BATCH_CAP,
    show_default=True,
    help="Maximum texts per /embed request.",
)
@click.option(
    "--hash-fallback",
    is_flag=True,
    help="Serve the weightless hashing embedder as model 'hash'.",
)
@click.option("--hash-dim", type=click.IntRange(min=1), default=256, show_default=True)
@click.option("--hash-seed", type=int, default=0, show_default=True)
@click.option(
    "--sentence-model",
    default="",
    help="Checkpoint id for a sentence encoder served as model 'sentence'.",
)
@click.option("--sentence-dim", type=click.IntRange(min=1), default=384, show_default=True)
@click.option(
    "--code-model",
    default="",
    help="Checkpoint id for a code encoder served as model 'code'.",
)
@click.option("--code-dim", type=click.IntRange(min=1), default=768, show_default=True)
def main(
    host: str,
    port: int,
    batch_cap: int,
    hash_fallback: bool,
    hash_dim: int,
    hash_seed: int,
    sentence_model: str,
    sentence_dim: int,
    code_model: str,
    code_dim: int,
) -> None:
    """Serve embedding models over the /embed wire protocol."""
    models: dict[str, ModelSpec] = {}
    if hash_fallback:
        models["hash"] = ModelSpec(kind="hash-fallback", dim=hash_dim, seed=hash_seed)
    if sentence_model:
        models["sentence"] = ModelSpec(
            kind="sentence-encoder", dim=sentence_dim, model_id=sentence_model
        )
    if code_model:
        models["code"] = ModelSpec(kind="code-encoder", dim=code_dim, model_id=code_model)
    if not models:
        raise click.UsageError(
            "no models configured; pass --hash-fallback, --sentence-model, or --code-model"
        )
    click.echo(
        f"serving {sorted(models)} on http://{host}:{port} (batch cap {batch_cap})",
        err=True,
    )
    run_bridge(BridgeConfig(models=models, host=host, port=port, batch_cap=batch_cap))


if __name__ == "__main__":
    sys.exit(main())
