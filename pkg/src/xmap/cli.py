"""Command-line frontend for embedding, training, indexing, and search.

stdout carries machine-readable JSON only; every diagnostic, progress
line, and human-readable summary goes to stderr.  ``XMAP_LOG`` selects
stderr verbosity: ``error``, ``info`` (default), or ``debug``.

Exit codes
    0  success
    1  usage error: unknown flags, missing arguments, out-of-range values
    2  data or format error: malformed files, dimension mismatches
    3  runtime failure: embedding backend unreachable, unexpected errors
"""

from __future__ import annotations

import csv
import json
import logging
import os
import sys
import traceback
from pathlib import Path

import click
import numpy as np

from . import __version__
from .corpus import (
    EmbeddingMatrix,
    align_corpus,
    read_corpus_jsonl,
    read_embeddings,
    read_split,
    split_ids,
    write_embeddings,
    write_split,
)
from .embedders import EmbedderSpec, embed_batch
from .errors import DataError, FormatError, ProtocolError, XmapError
from .evaluation import (
    build_distractor_sets,
    correlate_manual_scores,
    evaluate_search,
    pair_distances,
    permutation_p_value,
    random_baseline_mrr,
    read_manual_scores,
    sample_close_pairs,
)
from .knn import METRICS, build_index, save_index
from .mapper import MapperConfig, TrainConfig, load_model, save_model, train
from .pipeline import SearchEngine

logger = logging.getLogger("xmap.cli")

_LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}

_IN_PATH = click.Path(exists=True, dir_okay=False)
_OUT_PATH = click.Path(dir_okay=False, writable=True)


def _configure_logging() -> None:
    name = os.environ.get("XMAP_LOG", "info").strip().lower()
    level = _LOG_LEVELS.get(name, logging.INFO)
    logging.basicConfig(
        level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s", force=True
    )
    if name not in _LOG_LEVELS:
        logger.warning("unknown XMAP_LOG value %r; using info", name)


def _emit(payload: dict) -> None:
    """The one place stdout is written: a single JSON document."""
    click.echo(json.dumps(payload))


def _percent(value: float) -> str:
    return f"{value * 100.0:.3f}"


def _embedder_options(f):
    f = click.option("--model-name", default="", help="Model identifier on the external service.")(f)
    f = click.option("--endpoint", default="", help="External embedding service URL.")(f)
    f = click.option("--seed", type=int, default=0, show_default=True, help="Hashing embedder seed.")(f)
    f = click.option("--dim", type=click.IntRange(min=1), default=None, help="Embedding dimension.")(f)
    return f


def _maybe_embedder(
    dim: int | None, seed: int, endpoint: str, model_name: str
) -> EmbedderSpec | None:
    if endpoint:
        if dim is None:
            raise click.UsageError("--dim is required with --endpoint")
        if not model_name:
            raise click.UsageError("--model-name is required with --endpoint")
        return EmbedderSpec(kind="external", dim=dim, endpoint=endpoint, model_name=model_name)
    if model_name:
        raise click.UsageError("--model-name requires --endpoint")
    if dim is None:
        return None
    return EmbedderSpec(kind="hash", dim=dim, seed=seed)


def _read_ids(path: str) -> list[str]:
    ids = Path(path).read_text(encoding="utf-8").splitlines()
    ids = [line.strip() for line in ids if line.strip()]
    if not ids:
        raise DataError(f"no ids found in {path}")
    return ids


@click.group(name="xmap")
@click.version_option(__version__, prog_name="xmap")
def cli() -> None:
    """Translate text embeddings into code-embedding space and search code."""


@cli.command("embed")
@click.option("--corpus", "corpus_path", required=True, type=_IN_PATH, help="Corpus JSONL file.")
@click.option(
    "--field",
    type=click.Choice(["doc", "code"]),
    required=True,
    help="Which text field of each entry to embed.",
)
@_embedder_options
@click.option("--batch-size", type=click.IntRange(min=1), default=64, show_default=True)
@click.option("--timeout", type=float, default=120.0, show_default=True)
@click.option("--out", "out_path", required=True, type=_OUT_PATH, help="Embedding file to write.")
def cmd_embed(
    corpus_path: str,
    field: str,
    dim: int | None,
    seed: int,
    endpoint: str,
    model_name: str,
    batch_size: int,
    timeout: float,
    out_path: str,
) -> None:
    """Embed one text field of a corpus into an embedding file."""
    spec = _maybe_embedder(dim, seed, endpoint, model_name)
    if spec is None:
        raise click.UsageError("--dim is required (hash) or --endpoint/--model-name (external)")
    entries = read_corpus_jsonl(corpus_path)
    texts = [e.doc_text if field == "doc" else e.code_text for e in entries]
    total = len(texts)
    rows: list[np.ndarray] = []
    done = 0
    for start in range(0, total, batch_size):
        chunk = texts[start : start + batch_size]
        batch = embed_batch(spec, chunk, timeout=timeout)
        rows.append(batch.vectors.data)
        before, done = done, done + len(chunk)
        if done // 1000 > before // 1000 or done == total:
            logger.info("embedded %d/%d texts", done, total)
    data = np.vstack(rows) if rows else np.zeros((0, spec.dim), dtype=np.float32)
    matrix = EmbeddingMatrix(data)
    write_embeddings(matrix, out_path)
    _emit({"out": out_path, "count": matrix.count, "dim": matrix.dim})


@cli.command("split")
@click.option("--corpus", "corpus_path", required=True, type=_IN_PATH)
@click.option("--train-frac", type=float, default=0.8, show_default=True)
@click.option("--valid-frac", type=float, default=0.1, show_default=True)
@click.option("--test-frac", type=float, default=0.1, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_path", required=True, type=_OUT_PATH, help="Split JSON to write.")
def cmd_split(
    corpus_path: str,
    train_frac: float,
    valid_frac: float,
    test_frac: float,
    seed: int,
    out_path: str,
) -> None:
    """Partition corpus ids into train/valid/test with a seeded shuffle."""
    entries = read_corpus_jsonl(corpus_path)
    split = split_ids([e.id for e in entries], (train_frac, valid_frac, test_frac), seed)
    write_split(split, out_path)
    _emit(
        {
            "out": out_path,
            "train": len(split.train_ids),
            "valid": len(split.valid_ids),
            "test": len(split.test_ids),
            "seed": seed,
        }
    )


@cli.command("train")
@click.option("--corpus", "corpus_path", required=True, type=_IN_PATH)
@click.option("--nl-emb", "nl_path", required=True, type=_IN_PATH, help="Query-side embeddings.")
@click.option("--code-emb", "code_path", required=True, type=_IN_PATH, help="Code-side embeddings.")
@click.option("--split", "split_path", required=True, type=_IN_PATH)
@click.option(
    "--hidden",
    default="1280,896",
    show_default=True,
    help="Comma-separated hidden layer widths; empty for a single linear layer.",
)
@click.option("--margin", type=float, default=1.0, show_default=True)
@click.option("--lr", type=float, default=1e-5, show_default=True)
@click.option(
    "--batch",
    type=click.IntRange(min=2),
    default=16,
    show_default=True,
    help="Batch size; at least 2 so every example has an in-batch negative.",
)
@click.option("--patience", type=click.IntRange(min=1), default=10, show_default=True)
@click.option("--max-epochs", type=click.IntRange(min=1), default=500, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option(
    "--optimizer",
    type=click.Choice(["adaptive-moments", "sgd"]),
    default="adaptive-moments",
    show_default=True,
)
@click.option("--out", "out_path", required=True, type=_OUT_PATH, help="Model file to write.")
@click.option(
    "--report",
    "report_path",
    type=_OUT_PATH,
    default=None,
    help="Training report JSON [default: <out>.train.json].",
)
def cmd_train(
    corpus_path: str,
    nl_path: str,
    code_path: str,
    split_path: str,
    hidden: str,
    margin: float,
    lr: float,
    batch: int,
    patience: int,
    max_epochs: int,
    seed: int,
    optimizer: str,
    out_path: str,
    report_path: str | None,
) -> None:
    """Train the translation network and write the model plus a report."""
    try:
        hidden_dims = tuple(int(tok) for tok in hidden.split(",") if tok.strip())
    except ValueError:
        raise click.UsageError(f"--hidden must be comma-separated integers, got {hidden!r}")
    entries = read_corpus_jsonl(corpus_path)
    nl = read_embeddings(nl_path)
    code = read_embeddings(code_path)
    corpus = align_corpus(entries, nl, code)
    split = read_split(split_path)
    mcfg = MapperConfig(input_dim=nl.dim, hidden_dims=hidden_dims, output_dim=code.dim)
    tcfg = TrainConfig(
        learning_rate=lr,
        batch_size=batch,
        margin=margin,
        max_epochs=max_epochs,
        patience=patience,
        seed=seed,
        optimizer=optimizer,
    )
    logger.info(
        "training %s -> %s -> %s on %d train / %d valid ids",
        nl.dim,
        list(hidden_dims),
        code.dim,
        len(split.train_ids),
        len(split.valid_ids),
    )
    net, report = train(corpus, split, mcfg, tcfg)
    save_model(net, out_path)
    if report_path is None:
        report_path = out_path + ".train.json"
    Path(report_path).write_text(json.dumps(report.to_dict(), indent=2) + "\n", encoding="utf-8")
    best_valid = min(report.valid_loss_per_epoch)
    logger.info(
        "finished after %d epochs; best valid loss %.6g at epoch %d",
        report.epochs_run,
        best_valid,
        report.best_epoch,
    )
    _emit(
        {
            "out": out_path,
            "report": report_path,
            "epochs_run": report.epochs_run,
            "best_epoch": report.best_epoch,
            "best_valid_loss": best_valid,
            "stopped_early": report.stopped_early,
        }
    )


@cli.command("index")
@click.option("--corpus", "corpus_path", required=True, type=_IN_PATH)
@click.option("--emb", "emb_path", required=True, type=_IN_PATH, help="Code-side embeddings.")
@click.option(
    "--metric", type=click.Choice(list(METRICS)), default="squared-l2", show_default=True
)
@click.option("--out", "out_path", required=True, type=_OUT_PATH, help="Index file to write.")
def cmd_index(corpus_path: str, emb_path: str, metric: str, out_path: str) -> None:
    """Build an exact nearest-neighbor index over code embeddings."""
    entries = read_corpus_jsonl(corpus_path)
    matrix = read_embeddings(emb_path)
    index = build_index(matrix, [e.id for e in entries], metric)
    save_index(index, out_path)
    _emit({"out": out_path, "count": len(index), "dim": index.dim, "metric": metric})


@cli.command("search")
@click.option("--model", "model_path", required=True, type=_IN_PATH)
@click.option("--index", "index_path", required=True, type=_IN_PATH)
@click.option("--corpus", "corpus_path", required=True, type=_IN_PATH)
@click.option("--query-text", default=None, help="Natural-language query (needs an embedder).")
@click.option("--query-vec", default=None, help="JSON array: a raw query-space embedding.")
@_embedder_options
@click.option("-n", "n", type=click.IntRange(min=1), default=10, show_default=True)
@click.option("--timeout", type=float, default=120.0, show_default=True)
def cmd_search(
    model_path: str,
    index_path: str,
    corpus_path: str,
    query_text: str | None,
    query_vec: str | None,
    dim: int | None,
    seed: int,
    endpoint: str,
    model_name: str,
    n: int,
    timeout: float,
) -> None:
    """Rank the nearest code entries for one query."""
    if (query_text is None) == (query_vec is None):
        raise click.UsageError("provide exactly one of --query-text or --query-vec")
    embedder = _maybe_embedder(dim, seed, endpoint, model_name)
    engine = SearchEngine.load(model_path, index_path, corpus_path, embedder, timeout)
    if query_text is not None:
        if embedder is None:
            raise click.UsageError("--query-text requires --dim (hash) or --endpoint (external)")
        hits = engine.search_text(query_text, n)
    else:
        try:
            vector = json.loads(query_vec)
        except json.JSONDecodeError:
            raise click.UsageError("--query-vec must be a JSON array of numbers")
        if not isinstance(vector, list) or not all(
            isinstance(v, (int, float)) and not isinstance(v, bool) for v in vector
        ):
            raise click.UsageError("--query-vec must be a JSON array of numbers")
        hits = engine.search_vector(vector, n)
    _emit({"hits": [h.to_dict() for h in hits]})


@cli.command("eval")
@click.option("--model", "model_path", required=True, type=_IN_PATH)
@click.option("--corpus", "corpus_path", required=True, type=_IN_PATH)
@click.option("--nl-emb", "nl_path", required=True, type=_IN_PATH)
@click.option("--code-emb", "code_path", required=True, type=_IN_PATH)
@click.option("--split", "split_path", required=True, type=_IN_PATH)
@click.option(
    "--distractors",
    "k",
    type=click.IntRange(min=1),
    default=999,
    show_default=True,
    help="Distractor count per query; each query ranks k+1 candidates.",
)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option(
    "--metric", type=click.Choice(list(METRICS)), default="squared-l2", show_default=True
)
@click.option("--report", "report_path", type=_OUT_PATH, default=None, help="Full report JSON.")
@click.option(
    "--per-query", "per_query_path", type=_OUT_PATH, default=None, help="Per-query JSONL rows."
)
@click.option("--baseline", is_flag=True, help="Also report the random-ranking baseline MRR.")
def cmd_eval(
    model_path: str,
    corpus_path: str,
    nl_path: str,
    code_path: str,
    split_path: str,
    k: int,
    seed: int,
    metric: str,
    report_path: str | None,
    per_query_path: str | None,
    baseline: bool,
) -> None:
    """Score retrieval on the test split: MRR over seeded distractor sets."""
    net = load_model(model_path)
    entries = read_corpus_jsonl(corpus_path)
    corpus = align_corpus(entries, read_embeddings(nl_path), read_embeddings(code_path))
    split = read_split(split_path)
    test_ids = sorted(split.test_ids)
    sets = build_distractor_sets(test_ids, test_ids, k, seed)
    report = evaluate_search(net, corpus, sets, metric, seed=seed)
    if report_path is not None:
        Path(report_path).write_text(
            json.dumps(report.to_dict(), indent=2) + "\n", encoding="utf-8"
        )
    if per_query_path is not None:
        with open(per_query_path, "w", encoding="utf-8") as fh:
            for q in report.per_query:
                fh.write(
                    json.dumps(
                        {
                            "query_id": q.query_id,
                            "rank": q.rank,
                            "reciprocal_rank": q.reciprocal_rank,
                        }
                    )
                    + "\n"
                )
    payload: dict = {
        "mrr": report.mrr,
        "mrr_percent": _percent(report.mrr),
        "queries": len(report.per_query),
        "distractors": k,
        "metric": metric,
        "seed": seed,
    }
    logger.info("MRR %s%% over %d queries (k=%d)", payload["mrr_percent"], len(test_ids), k)
    if baseline:
        base = random_baseline_mrr(k + 1)
        payload["baseline_mrr"] = base
        payload["baseline_percent"] = _percent(base)
        logger.info("random baseline MRR %s%% over %d candidates", _percent(base), k + 1)
    _emit(payload)


@cli.command("baseline")
@click.option(
    "--candidates",
    type=click.IntRange(min=1),
    default=1000,
    show_default=True,
    help="Candidate pool size N; the expected random-ranking MRR is H_N / N.",
)
def cmd_baseline(candidates: int) -> None:
    """Closed-form expected MRR of a uniformly random ranking."""
    value = random_baseline_mrr(candidates)
    _emit({"candidates": candidates, "mrr": value, "mrr_percent": _percent(value)})


@cli.command("correlate")
@click.option("--scores", "scores_path", required=True, type=_IN_PATH, help="CSV: id_a,id_b,score.")
@click.option("--emb", "emb_path", required=True, type=_IN_PATH)
@click.option("--ids", "ids_path", required=True, type=_IN_PATH, help="One id per line, row-aligned.")
@click.option("--report", "report_path", type=_OUT_PATH, default=None)
@click.option(
    "--permutation-rounds",
    type=click.IntRange(min=0),
    default=0,
    show_default=True,
    help="Extra permutation-test p-value when positive.",
)
@click.option("--permutation-seed", type=int, default=0, show_default=True)
def cmd_correlate(
    scores_path: str,
    emb_path: str,
    ids_path: str,
    report_path: str | None,
    permutation_rounds: int,
    permutation_seed: int,
) -> None:
    """Correlate manual similarity scores with embedding distances."""
    scored = read_manual_scores(scores_path)
    matrix = read_embeddings(emb_path)
    ids = _read_ids(ids_path)
    distances = pair_distances(matrix, ids, [(a, b) for a, b, _ in scored])
    scores = np.array([s for _, _, s in scored], dtype=np.float64)
    rep = correlate_manual_scores(scores, distances)
    payload = rep.to_dict()
    payload["pairs"] = len(scored)
    if permutation_rounds > 0:
        payload["permutation_p_value"] = permutation_p_value(
            scores, distances, rounds=permutation_rounds, seed=permutation_seed
        )
    if report_path is not None:
        Path(report_path).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    logger.info("r=%.4f p=%.3g over %d pairs", rep.r, rep.p_value, rep.n)
    _emit(payload)


@cli.command("sample-pairs")
@click.option("--emb", "emb_path", required=True, type=_IN_PATH)
@click.option("--ids", "ids_path", required=True, type=_IN_PATH, help="One id per line, row-aligned.")
@click.option("--count", type=click.IntRange(min=1), default=150, show_default=True)
@click.option("--out", "out_path", required=True, type=_OUT_PATH, help="Pairs CSV to write.")
def cmd_sample_pairs(emb_path: str, ids_path: str, count: int, out_path: str) -> None:
    """Write the closest nearest-neighbor pairs for manual annotation."""
    matrix = read_embeddings(emb_path)
    ids = _read_ids(ids_path)
    pairs = sample_close_pairs(matrix, ids, count)
    with open(out_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id_a", "id_b", "distance"])
        for id_a, id_b, distance in pairs:
            writer.writerow([id_a, id_b, distance])
    _emit({"out": out_path, "pairs": len(pairs)})


@cli.command("serve")
@click.option("--model", "model_path", required=True, type=_IN_PATH)
@click.option("--index", "index_path", required=True, type=_IN_PATH)
@click.option("--corpus", "corpus_path", required=True, type=_IN_PATH)
@_embedder_options
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=click.IntRange(min=1, max=65535), default=8080, show_default=True)
@click.option("--max-n", type=click.IntRange(min=1), default=100, show_default=True)
@click.option("--timeout", type=float, default=120.0, show_default=True)
def cmd_serve(
    model_path: str,
    index_path: str,
    corpus_path: str,
    dim: int | None,
    seed: int,
    endpoint: str,
    model_name: str,
    host: str,
    port: int,
    max_n: int,
    timeout: float,
) -> None:
    """Serve the search API over HTTP."""
    from .service import ServiceConfig, run_service

    embedder = _maybe_embedder(dim, seed, endpoint, model_name)
    run_service(
        ServiceConfig(
            model_path=model_path,
            index_path=index_path,
            corpus_path=corpus_path,
            embedder=embedder,
            host=host,
            port=port,
            max_results=max_n,
            embed_timeout=timeout,
        )
    )


def main(argv: list[str] | None = None) -> int:
    """Entry point translating exceptions into the documented exit codes."""
    _configure_logging()
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.exceptions.Exit as exc:
        return int(exc.exit_code)
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return 1
    except click.UsageError as exc:
        click.echo(f"usage error: {exc.format_message()}", err=True)
        return 1
    except (DataError, FormatError) as exc:
        click.echo(f"error: {exc}", err=True)
        return 2
    except OSError as exc:
        click.echo(f"error: {exc}", err=True)
        return 2
    except ProtocolError as exc:
        click.echo(f"error: {exc}", err=True)
        return 3
    except XmapError as exc:
        click.echo(f"error: {exc}", err=True)
        return 3
    except Exception as exc:
        if logger.isEnabledFor(logging.DEBUG):
            traceback.print_exc()
        click.echo(f"unexpected error: {exc}", err=True)
        return 3


if __name__ == "__main__":
    sys.exit(main())
