"""Retrieval evaluation: distractor ranking, MRR, baselines, correlation.

Each test query is ranked against its own candidate set: the true code
item plus k sampled distractors.  Reciprocal ranks average into MRR, which
is compared against the closed-form random baseline H_N / N.  Separately,
human similarity scores can be correlated against embedding distances with
Pearson's r and a two-tailed p-value computed from Student's t via a
hand-rolled regularized incomplete beta (continued fraction), so the
statistics need no external dependencies.
"""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass

import numpy as np

from .corpus import EmbeddingMatrix, PairedCorpus
from .errors import DataError
from .knn import build_index
from .mapper import MapperNetwork, forward, pairwise_sq_dists

DEFAULT_DISTRACTORS = 999


def _query_stream_key(query_id: str) -> int:
    """Stable 64-bit hash mixing a query id into a seed sequence."""
    digest = hashlib.blake2b(query_id.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


@dataclass(frozen=True)
class DistractorSet:
    """One query plus its candidate pool: the true item and k decoys."""

    query_id: str
    true_id: str
    candidate_ids: tuple[str, ...]

    def __post_init__(self) -> None:
        if len(set(self.candidate_ids)) != len(self.candidate_ids):
            raise DataError(f"query {self.query_id!r}: duplicate candidate ids")
        if self.candidate_ids.count(self.true_id) != 1:
            raise DataError(
                f"query {self.query_id!r}: true id must appear exactly once in candidates"
            )
        if len(self.candidate_ids) < 2:
            raise DataError(f"query {self.query_id!r}: need at least one distractor")

    @property
    def k(self) -> int:
        return len(self.candidate_ids) - 1


def build_distractor_sets(
    test_ids: list[str], pool_ids: list[str], k: int, seed: int
) -> list[DistractorSet]:
    """Sample k distractors per test id, uniformly without replacement.

    Each query draws from its own seeded stream (seed mixed with a hash of
    the query id), so a set depends only on (sorted pool, seed, query_id)
    and never on evaluation order or the other queries.
    """
    if k < 1:
        raise DataError(f"k must be >= 1, got {k}")
    if len(set(pool_ids)) != len(pool_ids):
        raise DataError("pool ids must be unique")
    pool = sorted(pool_ids)
    if len(pool) < k + 1:
        raise DataError(f"pool of {len(pool)} cannot supply {k} distractors plus the true item")
    missing = set(test_ids) - set(pool)
    if missing:
        raise DataError(f"test ids not in pool: {sorted(missing)[:5]}")
    position = {item_id: i for i, item_id in enumerate(pool)}

    sets: list[DistractorSet] = []
    for query_id in test_ids:
        rng = np.random.default_rng(
            [seed & 0xFFFFFFFFFFFFFFFF, _query_stream_key(query_id)]
        )
        pos = position[query_id]
        # sample from the pool with the true item's slot removed, then shift
        # indices at or past that slot back up
        drawn = rng.choice(len(pool) - 1, size=k, replace=False)
        drawn = drawn + (drawn >= pos)
        sets.append(
            DistractorSet(
                query_id=query_id,
                true_id=query_id,
                candidate_ids=(query_id, *(pool[i] for i in drawn)),
            )
        )
    return sets


def reciprocal_rank(ranked_ids: list[str], true_id: str) -> float:
    """1 / (1-based position of true_id); 0.0 when absent."""
    if not ranked_ids:
        raise DataError("ranked list must be non-empty")
    try:
        return 1.0 / (ranked_ids.index(true_id) + 1)
    except ValueError:
        return 0.0


@dataclass(frozen=True)
class QueryResult:
    query_id: str
    rank: int | None
    reciprocal_rank: float


@dataclass
class EvalReport:
    mrr: float
    per_query: list[QueryResult]
    k: int
    seed: int

    def __post_init__(self) -> None:
        if not self.per_query:
            raise DataError("eval report needs at least one query")
        mean_rr = float(np.mean([q.reciprocal_rank for q in self.per_query]))
        if abs(self.mrr - mean_rr) > 1e-12:
            raise DataError("mrr does not equal the mean reciprocal rank")
        if not 0.0 <= self.mrr <= 1.0:
            raise DataError(f"mrr {self.mrr} outside [0, 1]")

    def to_dict(self) -> dict:
        return {
            "mrr": self.mrr,
            "k": self.k,
            "seed": self.seed,
            "per_query": [
                {"query_id": q.query_id, "rank": q.rank, "reciprocal_rank": q.reciprocal_rank}
                for q in self.per_query
            ],
        }


def evaluate_search(
    net: MapperNetwork,
    corpus: PairedCorpus,
    sets: list[DistractorSet],
    metric: str = "squared-l2",
    seed: int = 0,
) -> EvalReport:
    """Rank every query's candidates by distance to its mapped NL vector.

    Each candidate set is indexed in isolation, so items outside the set
    can never influence a rank.  Queries are processed and reported in
    input order.
    """
    if not sets:
        raise DataError("no distractor sets to evaluate")
    k = sets[0].k
    if any(s.k != k for s in sets):
        raise DataError("all distractor sets must share one k")
    if corpus.nl_vectors.dim != net.config.input_dim:
        raise DataError(
            f"NL vectors have dim {corpus.nl_vectors.dim}, model expects {net.config.input_dim}"
        )
    if corpus.code_vectors.dim != net.config.output_dim:
        raise DataError(
            f"code vectors have dim {corpus.code_vectors.dim}, "
            f"model emits {net.config.output_dim}"
        )

    per_query: list[QueryResult] = []
    for s in sets:
        rows = [corpus.row_of(c) for c in s.candidate_ids]
        candidates = EmbeddingMatrix(corpus.code_vectors.data[rows])
        index = build_index(candidates, list(s.candidate_ids), metric)
        predicted = forward(net, corpus.nl_vector(s.query_id))
        hits = index.search(predicted, len(s.candidate_ids))
        ranked = [h.id for h in hits]
        rr = reciprocal_rank(ranked, s.true_id)
        rank = ranked.index(s.true_id) + 1 if rr > 0 else None
        per_query.append(QueryResult(query_id=s.query_id, rank=rank, reciprocal_rank=rr))

    mrr = float(np.mean([q.reciprocal_rank for q in per_query]))
    return EvalReport(mrr=mrr, per_query=per_query, k=k, seed=seed)


def random_baseline_mrr(candidate_count: int) -> float:
    """Expected MRR of a uniform random ranking over N candidates: H_N / N."""
    if candidate_count < 1:
        raise DataError(f"candidate_count must be >= 1, got {candidate_count}")
    harmonic = math.fsum(1.0 / r for r in range(1, candidate_count + 1))
    return harmonic / candidate_count


def pearson(x: np.ndarray, y: np.ndarray) -> float:
    """Pearson's r by the two-pass formula, accumulated in float64."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 1 or y.ndim != 1 or x.shape != y.shape:
        raise DataError(f"series must be 1-D and equal length, got {x.shape} and {y.shape}")
    n = x.size
    if n < 3:
        raise DataError(f"need n >= 3 points, got {n}")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        raise DataError("correlation undefined for a constant series")
    return float(dx @ dy) / math.sqrt(sxx * syy)


def _beta_continued_fraction(a: float, b: float, x: float) -> float:
    """Continued-fraction core of the regularized incomplete beta (Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, 400):
        m2 = 2 * m
        num = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + num * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + num / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        num = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + num * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + num / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-14:
            return h
    raise ArithmeticError("incomplete beta continued fraction did not converge")


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    """I_x(a, b) to absolute error well under 1e-10 for a, b > 0."""
    if a <= 0 or b <= 0:
        raise DataError("incomplete beta requires a > 0 and b > 0")
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    log_front = (
        math.lgamma(a + b)
        - math.lgamma(a)
        - math.lgamma(b)
        + a * math.log(x)
        + b * math.log1p(-x)
    )
    front = math.exp(log_front)
    # the continued fraction converges fast only on one side of the mean;
    # use the symmetry I_x(a,b) = 1 - I_{1-x}(b,a) for the other
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _beta_continued_fraction(a, b, x) / a
    return 1.0 - front * _beta_continued_fraction(b, a, 1.0 - x) / b


def pearson_p_value(r: float, n: int) -> float:
    """Two-tailed p for observed r under the null of zero correlation.

    Uses t = r * sqrt((n-2) / (1-r^2)) with n-2 degrees of freedom; the
    two-sided tail is I_x(nu/2, 1/2) at x = nu / (nu + t^2).
    """
    if n < 3:
        raise DataError(f"need n >= 3, got {n}")
    if not -1.0 <= r <= 1.0:
        raise DataError(f"r must lie in [-1, 1], got {r}")
    if abs(r) == 1.0:
        return 0.0
    if r == 0.0:
        return 1.0
    nu = float(n - 2)
    t_squared = r * r * nu / (1.0 - r * r)
    return regularized_incomplete_beta(nu / 2.0, 0.5, nu / (nu + t_squared))


def permutation_p_value(
    x: np.ndarray, y: np.ndarray, rounds: int = 2000, seed: int = 0
) -> float:
    """Monte-Carlo two-tailed p: shuffle y, count |r| at least as extreme.

    A cross-check for the analytic p at small n; the +1 correction keeps
    the estimate valid as a p-value.
    """
    if rounds < 1:
        raise DataError("rounds must be >= 1")
    observed = abs(pearson(x, y))
    y_work = np.array(y, dtype=np.float64)
    rng = np.random.default_rng(seed)
    hits = 0
    for _ in range(rounds):
        rng.shuffle(y_work)
        hits += abs(pearson(x, y_work)) >= observed
    return (hits + 1) / (rounds + 1)


@dataclass(frozen=True)
class CorrelationReport:
    r: float
    p_value: float
    n: int

    def __post_init__(self) -> None:
        if not -1.0 <= self.r <= 1.0:
            raise DataError(f"r {self.r} outside [-1, 1]")
        if not 0.0 <= self.p_value <= 1.0:
            raise DataError(f"p-value {self.p_value} outside [0, 1]")
        if self.n < 3:
            raise DataError(f"n must be >= 3, got {self.n}")

    def to_dict(self) -> dict:
        return {"r": self.r, "p_value": self.p_value, "n": self.n}


def correlate_manual_scores(
    scores: np.ndarray, distances: np.ndarray
) -> CorrelationReport:
    """Pearson r and p between human similarity scores and distances."""
    r = pearson(scores, distances)
    n = int(np.asarray(scores).size)
    return CorrelationReport(r=r, p_value=pearson_p_value(r, n), n=n)


def sample_close_pairs(
    matrix: EmbeddingMatrix, ids: list[str], count: int
) -> list[tuple[str, str, float]]:
    """The closest nearest-neighbor pairs: (id_a, id_b, Euclidean distance).

    Each row contributes its nearest neighbor (ties to the smallest id);
    unordered duplicates collapse; pairs are sorted by (distance, id_a,
    id_b) with id_a < id_b, and the closest `count` are returned.  Fewer
    than `count` pairs come back only when the corpus cannot supply them.
    """
    if count < 1:
        raise DataError(f"count must be >= 1, got {count}")
    if matrix.count < 2:
        raise DataError("need at least 2 vectors to form a pair")
    if len(ids) != matrix.count:
        raise DataError(f"{matrix.count} vectors but {len(ids)} ids")
    if len(set(ids)) != len(ids):
        raise DataError("ids must be unique")

    data = matrix.data.astype(np.float64)
    d = pairwise_sq_dists(data, data)
    np.fill_diagonal(d, np.inf)
    pairs: dict[tuple[str, str], float] = {}
    for i in range(matrix.count):
        row = d[i]
        nearest = float(row.min())
        tied = np.flatnonzero(row == nearest)
        j = min(tied, key=lambda c: ids[c])
        a, b = sorted((ids[i], ids[j]))
        pairs[(a, b)] = math.sqrt(nearest)
    ordered = sorted((dist, a, b) for (a, b), dist in pairs.items())
    return [(a, b, dist) for dist, a, b in ordered[:count]]


def read_manual_scores(path) -> list[tuple[str, str, float]]:
    """Parse the (id_a, id_b, score) CSV; scores must lie in [0, 10]."""
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty scores file") from None
        if header != ["id_a", "id_b", "score"]:
            raise DataError(f"{path}: expected header id_a,id_b,score, got {header}")
        rows: list[tuple[str, str, float]] = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise DataError(f"{path}:{lineno}: expected 3 columns, got {len(row)}")
            id_a, id_b, raw = row
            try:
                score = float(raw)
            except ValueError:
                raise DataError(f"{path}:{lineno}: score {raw!r} is not a number") from None
            if not 0.0 <= score <= 10.0:
                raise DataError(f"{path}:{lineno}: score {score} outside [0, 10]")
            if id_a == id_b:
                raise DataError(f"{path}:{lineno}: pair of identical ids {id_a!r}")
            rows.append((id_a, id_b, score))
    return rows


def pair_distances(
    matrix: EmbeddingMatrix, ids: list[str], pairs: list[tuple[str, str]]
) -> np.ndarray:
    """Euclidean distance between each (id_a, id_b) pair's vectors."""
    row_of = {item_id: i for i, item_id in enumerate(ids)}
    if len(row_of) != len(ids):
        raise DataError("ids must be unique")
    out = np.empty(len(pairs), dtype=np.float64)
    data = matrix.data.astype(np.float64)
    for i, (id_a, id_b) in enumerate(pairs):
        try:
            va, vb = data[row_of[id_a]], data[row_of[id_b]]
        except KeyError as exc:
            raise DataError(f"unknown id in pair list: {exc}") from None
        out[i] = math.sqrt(float(np.sum((va - vb) ** 2)))
    return out
