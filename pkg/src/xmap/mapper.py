"""The trainable map from NL-embedding space to code-embedding space.

A feed-forward network (ReLU hidden layers, linear output) is trained so
that the image of a description vector lands near its paired code vector
and away from the other code vectors in the batch.  The loss over a batch
of B (prediction P, target T) rows, with d(i, j) the squared Euclidean
distance between P_i and T_j and margin m, is

    L = (1/B) * sum_i [ d(i, i) + (1/(B-1)) * sum_{j != i} max(0, m - d(i, j)) ]

Gradients are exact analytic reverse-mode derivatives of this expression
(ReLU subgradient at 0 is 0; hinge subgradient at the kink is 0), checked
against central finite differences in the test suite.

Everything here is deterministic per seed: parameters live in float32, all
arithmetic runs in float64, and training is single-threaded with a fixed
iteration order, so identical runs produce bit-identical model files.

MAP1 model file layout (integers little-endian):

    bytes 0..3   magic ``MAP1``
    bytes 4..7   version u32 == 1
    bytes 8..11  layer_count u32
    then per layer: fan_in u32, fan_out u32
    then per layer: W (fan_out x fan_in, row-major) then b, float32 LE
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import PairedCorpus, SplitSpec
from .errors import (
    BadMagicError,
    CorruptRecordError,
    DataError,
    NonFiniteError,
    TruncatedPayloadError,
    VersionMismatchError,
)

MODEL_MAGIC = b"MAP1"
MODEL_VERSION = 1

_MODEL_HEADER = struct.Struct("<4sII")  # magic, version, layer_count
_LAYER_SHAPE = struct.Struct("<II")  # fan_in, fan_out


@dataclass(frozen=True)
class MapperConfig:
    """Layer widths: input -> hidden... -> output.

    Defaults mirror the reference translation task (1024-dim sentence
    vectors into 384-dim code vectors through 1280 and 896 wide hidden
    layers); any depth >= 0 hidden layers is accepted.
    """

    input_dim: int = 1024
    hidden_dims: tuple[int, ...] = (1280, 896)
    output_dim: int = 384

    def __post_init__(self) -> None:
        dims = (self.input_dim, *self.hidden_dims, self.output_dim)
        if any(d < 1 for d in dims):
            raise DataError(f"all layer dims must be >= 1, got {dims}")
        object.__setattr__(self, "hidden_dims", tuple(self.hidden_dims))

    @property
    def layer_shapes(self) -> list[tuple[int, int]]:
        """(fan_in, fan_out) per layer, input to output."""
        dims = (self.input_dim, *self.hidden_dims, self.output_dim)
        return [(dims[i], dims[i + 1]) for i in range(len(dims) - 1)]


def param_count(config: MapperConfig) -> int:
    """Total trainable scalars: per layer fan_in * fan_out weights + fan_out biases."""
    return sum(fi * fo + fo for fi, fo in config.layer_shapes)


class MapperNetwork:
    """Weights and biases of the trained map; immutable float32 storage.

    ``weights[l]`` has shape (fan_out, fan_in) and acts as y = W @ x + b.
    """

    __slots__ = ("config", "weights", "biases")

    def __init__(
        self,
        config: MapperConfig,
        weights: list[np.ndarray],
        biases: list[np.ndarray],
    ) -> None:
        shapes = config.layer_shapes
        if len(weights) != len(shapes) or len(biases) != len(shapes):
            raise DataError(
                f"expected {len(shapes)} layers, got {len(weights)} weight "
                f"and {len(biases)} bias arrays"
            )
        ws: list[np.ndarray] = []
        bs: list[np.ndarray] = []
        for l, (fan_in, fan_out) in enumerate(shapes):
            w = np.asarray(weights[l], dtype=np.float32, order="C")
            b = np.asarray(biases[l], dtype=np.float32, order="C")
            if w.shape != (fan_out, fan_in):
                raise DataError(
                    f"layer {l}: weight shape {w.shape} != {(fan_out, fan_in)}"
                )
            if b.shape != (fan_out,):
                raise DataError(f"layer {l}: bias shape {b.shape} != {(fan_out,)}")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise NonFiniteError(f"layer {l}: non-finite parameters")
            w = w.copy() if w is weights[l] else w
            b = b.copy() if b is biases[l] else b
            w.flags.writeable = False
            b.flags.writeable = False
            ws.append(w)
            bs.append(b)
        self.config = config
        self.weights = ws
        self.biases = bs

    def stored_value_count(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, MapperNetwork):
            return NotImplemented
        return self.config == other.config and all(
            np.array_equal(a, b)
            for a, b in zip(self.weights + self.biases, other.weights + other.biases)
        )

    def __repr__(self) -> str:
        dims = (self.config.input_dim, *self.config.hidden_dims, self.config.output_dim)
        return f"MapperNetwork({'->'.join(map(str, dims))})"


def init_network(config: MapperConfig, seed: int) -> MapperNetwork:
    """Uniform Glorot weights (+-sqrt(6/(fan_in+fan_out))), zero biases."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in config.layer_shapes:
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)).astype(np.float32))
        biases.append(np.zeros(fan_out, dtype=np.float32))
    return MapperNetwork(config, weights, biases)


def _forward_params(
    weights: list[np.ndarray], biases: list[np.ndarray], x: np.ndarray
) -> np.ndarray:
    """Batch forward pass over raw parameter arrays, all math in float64."""
    a = np.asarray(x, dtype=np.float64)
    for w, b in zip(weights[:-1], biases[:-1]):
        a = np.maximum(a @ np.asarray(w, np.float64).T + np.asarray(b, np.float64), 0.0)
    return a @ np.asarray(weights[-1], np.float64).T + np.asarray(biases[-1], np.float64)


def forward_batch(net: MapperNetwork, xs: np.ndarray) -> np.ndarray:
    """Map a (B, input_dim) batch to (B, output_dim) predictions (float64)."""
    xs = np.asarray(xs, dtype=np.float64)
    if xs.ndim != 2 or xs.shape[1] != net.config.input_dim:
        raise DataError(
            f"expected input of shape (*, {net.config.input_dim}), got {xs.shape}"
        )
    if not np.all(np.isfinite(xs)):
        raise NonFiniteError("forward input contains NaN or Inf")
    return _forward_params(net.weights, net.biases, xs)


def forward(net: MapperNetwork, x: np.ndarray) -> np.ndarray:
    """Map one input vector to its predicted code vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise DataError(f"expected a 1-D vector, got shape {x.shape}")
    return forward_batch(net, x[None, :])[0]


def pairwise_sq_dists(p: np.ndarray, t: np.ndarray) -> np.ndarray:
    """d[i, j] = ||p_i - t_j||^2 by direct differencing in float64.

    Chunked over rows of p so temporary memory stays bounded; each element
    is an independent reduction, so chunking cannot change any value.
    """
    p = np.asarray(p, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    out = np.empty((p.shape[0], t.shape[0]), dtype=np.float64)
    chunk = max(1, (1 << 22) // max(1, t.shape[0] * t.shape[1]))
    for start in range(0, p.shape[0], chunk):
        block = p[start : start + chunk]
        out[start : start + chunk] = np.sum(
            (block[:, None, :] - t[None, :, :]) ** 2, axis=2
        )
    return out


def margin_loss(
    predictions: np.ndarray, targets: np.ndarray, margin: float
) -> tuple[float, np.ndarray]:
    """Batch loss and the full (B, B) squared-distance matrix.

    Positive term: mean of diagonal distances.  Negative term: per row,
    hinge max(0, margin - d(i, j)) averaged over the B-1 off-diagonal
    columns, then averaged over rows.
    """
    p = np.asarray(predictions, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    if p.shape != t.shape or p.ndim != 2:
        raise DataError(f"shape mismatch: predictions {p.shape}, targets {t.shape}")
    b = p.shape[0]
    if b < 2:
        raise DataError("margin loss needs a batch of >= 2 (in-batch negatives)")
    d = pairwise_sq_dists(p, t)
    positive = np.trace(d) / b
    hinge = np.maximum(0.0, margin - d)
    np.fill_diagonal(hinge, 0.0)
    negative = hinge.sum() / (b * (b - 1))
    return float(positive + negative), d


def loss_from_params(
    weights: list[np.ndarray],
    biases: list[np.ndarray],
    xs: np.ndarray,
    targets: np.ndarray,
    margin: float,
) -> float:
    """Loss as a pure function of raw parameter arrays (float64 throughout).

    This is the function the finite-difference gradient check perturbs.
    """
    p = _forward_params(weights, biases, np.asarray(xs, dtype=np.float64))
    return margin_loss(p, np.asarray(targets, dtype=np.float64), margin)[0]


def gradients(
    net: MapperNetwork, xs: np.ndarray, targets: np.ndarray, margin: float
) -> tuple[list[np.ndarray], list[np.ndarray], float]:
    """Exact analytic gradients of the batch loss for every W and b.

    Returns (weight grads, bias grads, loss), float64, shaped like the
    parameters.  Subgradient convention: ReLU' (0) = 0 and the hinge
    contributes nothing exactly at margin - d == 0.
    """
    xs = np.asarray(xs, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    if xs.ndim != 2 or xs.shape[1] != net.config.input_dim:
        raise DataError(
            f"expected input of shape (*, {net.config.input_dim}), got {xs.shape}"
        )
    if t.ndim != 2 or t.shape != (xs.shape[0], net.config.output_dim):
        raise DataError(
            f"expected targets of shape ({xs.shape[0]}, {net.config.output_dim}), "
            f"got {t.shape}"
        )
    b = xs.shape[0]
    if b < 2:
        raise DataError("margin loss needs a batch of >= 2 (in-batch negatives)")

    ws = [np.asarray(w, np.float64) for w in net.weights]
    bs = [np.asarray(v, np.float64) for v in net.biases]
    n_layers = len(ws)

    # forward with caches: acts[l] is the input to layer l; zs are hidden
    # pre-activations
    acts = [xs]
    zs: list[np.ndarray] = []
    a = xs
    for l in range(n_layers - 1):
        z = a @ ws[l].T + bs[l]
        zs.append(z)
        a = np.maximum(z, 0.0)
        acts.append(a)
    p = a @ ws[-1].T + bs[-1]

    loss, d = margin_loss(p, t, margin)

    # dL/dP: positive term pulls toward the paired target; active hinges
    # push away from the other targets
    active = (margin - d) > 0.0
    np.fill_diagonal(active, False)
    n_active = active.sum(axis=1).astype(np.float64)
    grad_p = (2.0 / b) * (p - t)
    grad_p -= (2.0 / (b * (b - 1))) * (n_active[:, None] * p - active @ t)

    grads_w: list[np.ndarray] = [np.empty(0)] * n_layers
    grads_b: list[np.ndarray] = [np.empty(0)] * n_layers
    delta = grad_p
    for l in range(n_layers - 1, -1, -1):
        grads_w[l] = delta.T @ acts[l]
        grads_b[l] = delta.sum(axis=0)
        if l > 0:
            delta = (delta @ ws[l]) * (zs[l - 1] > 0.0)
    return grads_w, grads_b, loss


def network_loss(
    net: MapperNetwork, xs: np.ndarray, targets: np.ndarray, margin: float
) -> float:
    """Batch loss of the current parameters, no gradient bookkeeping."""
    return margin_loss(forward_batch(net, xs), targets, margin)[0]


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-5
    batch_size: int = 16
    margin: float = 1.0
    max_epochs: int = 500
    patience: int = 10
    seed: int = 0
    optimizer: str = "adaptive-moments"  # or "sgd"

    def __post_init__(self) -> None:
        if self.learning_rate <= 0:
            raise DataError("learning_rate must be > 0")
        if self.batch_size < 2:
            raise DataError("batch_size must be >= 2 (in-batch negatives)")
        if self.margin < 0:
            raise DataError("margin must be >= 0")
        if self.max_epochs < 1:
            raise DataError("max_epochs must be >= 1")
        if self.patience < 1:
            raise DataError("patience must be >= 1")
        if self.optimizer not in ("sgd", "adaptive-moments"):
            raise DataError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class TrainReport:
    epochs_run: int
    best_epoch: int
    train_loss_per_epoch: list[float]
    valid_loss_per_epoch: list[float]
    stopped_early: bool

    def __post_init__(self) -> None:
        if self.valid_loss_per_epoch:
            best = min(self.valid_loss_per_epoch)
            if self.valid_loss_per_epoch[self.best_epoch] != best:
                raise DataError("best_epoch does not index the minimum validation loss")

    def to_dict(self) -> dict:
        return {
            "epochs_run": self.epochs_run,
            "best_epoch": self.best_epoch,
            "train_loss_per_epoch": self.train_loss_per_epoch,
            "valid_loss_per_epoch": self.valid_loss_per_epoch,
            "stopped_early": self.stopped_early,
        }


class _Optimizer:
    """Per-parameter update rule; state in float64, parameters in float32."""

    def __init__(self, kind: str, lr: float, shapes: list[tuple[int, ...]]) -> None:
        self.kind = kind
        self.lr = lr
        self.step_count = 0
        if kind == "adaptive-moments":
            self.m = [np.zeros(s, dtype=np.float64) for s in shapes]
            self.v = [np.zeros(s, dtype=np.float64) for s in shapes]

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        self.step_count += 1
        if self.kind == "sgd":
            for p, g in zip(params, grads):
                p[...] = (p.astype(np.float64) - self.lr * g).astype(np.float32)
            return
        beta1, beta2, eps = 0.9, 0.999, 1e-8
        bias1 = 1.0 - beta1**self.step_count
        bias2 = 1.0 - beta2**self.step_count
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= beta1
            m += (1.0 - beta1) * g
            v *= beta2
            v += (1.0 - beta2) * g * g
            update = (m / bias1) / (np.sqrt(v / bias2) + eps)
            p[...] = (p.astype(np.float64) - self.lr * update).astype(np.float32)


def train(
    corpus: PairedCorpus,
    split: SplitSpec,
    mcfg: MapperConfig,
    tcfg: TrainConfig,
) -> tuple[MapperNetwork, TrainReport]:
    """Train with in-batch negatives and early stopping on validation loss.

    Each epoch reshuffles the train ids with a dedicated seeded stream,
    walks them in batches of batch_size (a trailing batch of 1 is dropped:
    no negative available), and steps the optimizer per batch.  After each
    epoch the full validation set is scored as a single batch; training
    stops once validation loss has not improved for `patience` epochs, and
    the parameters from the best epoch are returned.
    """
    if len(split.train_ids) < 2:
        raise DataError("train split must contain >= 2 items")
    if len(split.valid_ids) < 2:
        raise DataError("valid split must contain >= 2 items (validation loss is batch loss)")
    if corpus.nl_vectors.dim != mcfg.input_dim:
        raise DataError(
            f"NL vectors have dim {corpus.nl_vectors.dim}, model expects {mcfg.input_dim}"
        )
    if corpus.code_vectors.dim != mcfg.output_dim:
        raise DataError(
            f"code vectors have dim {corpus.code_vectors.dim}, model expects {mcfg.output_dim}"
        )

    def rows(ids: frozenset[str]) -> tuple[np.ndarray, np.ndarray]:
        idx = [corpus.row_of(i) for i in sorted(ids)]
        xs = corpus.nl_vectors.data[idx].astype(np.float64)
        ts = corpus.code_vectors.data[idx].astype(np.float64)
        return xs, ts

    x_train, t_train = rows(split.train_ids)
    x_valid, t_valid = rows(split.valid_ids)
    n_train = x_train.shape[0]

    net = init_network(mcfg, tcfg.seed)
    params = [w.copy() for w in net.weights] + [b.copy() for b in net.biases]
    for p in params:
        p.flags.writeable = True
    n_layers = len(net.weights)
    opt = _Optimizer(tcfg.optimizer, tcfg.learning_rate, [p.shape for p in params])
    shuffle_rng = np.random.default_rng([tcfg.seed, 1])

    def as_net() -> MapperNetwork:
        return MapperNetwork(mcfg, params[:n_layers], params[n_layers:])

    best_valid = np.inf
    best_epoch = -1
    best_params: list[np.ndarray] = []
    since_improvement = 0
    train_losses: list[float] = []
    valid_losses: list[float] = []
    stopped_early = False

    for _epoch in range(tcfg.max_epochs):
        order = shuffle_rng.permutation(n_train)
        batch_losses: list[float] = []
        current = as_net()
        for start in range(0, n_train, tcfg.batch_size):
            idx = order[start : start + tcfg.batch_size]
            if idx.size < 2:
                continue
            gw, gb, loss = gradients(current, x_train[idx], t_train[idx], tcfg.margin)
            opt.step(params, gw + gb)
            current = as_net()
            batch_losses.append(loss)
        train_losses.append(float(np.mean(batch_losses)) if batch_losses else np.nan)

        valid_loss = network_loss(current, x_valid, t_valid, tcfg.margin)
        valid_losses.append(valid_loss)
        if valid_loss < best_valid:
            best_valid = valid_loss
            best_epoch = len(valid_losses) - 1
            best_params = [p.copy() for p in params]
            since_improvement = 0
        else:
            since_improvement += 1
            if since_improvement >= tcfg.patience:
                stopped_early = True
                break

    final = MapperNetwork(mcfg, best_params[:n_layers], best_params[n_layers:])
    report = TrainReport(
        epochs_run=len(valid_losses),
        best_epoch=best_epoch,
        train_loss_per_epoch=train_losses,
        valid_loss_per_epoch=valid_losses,
        stopped_early=stopped_early,
    )
    return final, report


def save_model(net: MapperNetwork, path: str | Path) -> None:
    """Write the network in the MAP1 format (bit-exact round trip)."""
    shapes = net.config.layer_shapes
    parts = [_MODEL_HEADER.pack(MODEL_MAGIC, MODEL_VERSION, len(shapes))]
    for fan_in, fan_out in shapes:
        parts.append(_LAYER_SHAPE.pack(fan_in, fan_out))
    for w, b in zip(net.weights, net.biases):
        parts.append(w.astype("<f4", copy=False).tobytes(order="C"))
        parts.append(b.astype("<f4", copy=False).tobytes(order="C"))
    Path(path).write_bytes(b"".join(parts))


def load_model(path: str | Path) -> MapperNetwork:
    """Read a MAP1 file; the returned network carries its MapperConfig."""
    buf = Path(path).read_bytes()
    if len(buf) < _MODEL_HEADER.size:
        raise TruncatedPayloadError("MAP1 header truncated")
    magic, version, layer_count = _MODEL_HEADER.unpack_from(buf, 0)
    if magic != MODEL_MAGIC:
        raise BadMagicError(f"expected magic {MODEL_MAGIC!r}, found {magic!r}")
    if version != MODEL_VERSION:
        raise VersionMismatchError(f"unsupported MAP1 version {version}")
    if layer_count < 1:
        raise CorruptRecordError("MAP1 declares zero layers")

    offset = _MODEL_HEADER.size
    shapes: list[tuple[int, int]] = []
    for _ in range(layer_count):
        if len(buf) - offset < _LAYER_SHAPE.size:
            raise TruncatedPayloadError("MAP1 layer shape table truncated")
        fan_in, fan_out = _LAYER_SHAPE.unpack_from(buf, offset)
        offset += _LAYER_SHAPE.size
        if fan_in < 1 or fan_out < 1:
            raise CorruptRecordError(f"MAP1 layer shape ({fan_in}, {fan_out}) invalid")
        shapes.append((fan_in, fan_out))
    for (_, prev_out), (next_in, _) in zip(shapes, shapes[1:]):
        if prev_out != next_in:
            raise CorruptRecordError(
                f"MAP1 layer chain broken: fan_out {prev_out} feeds fan_in {next_in}"
            )

    weights, biases = [], []
    for fan_in, fan_out in shapes:
        w_bytes = fan_out * fan_in * 4
        b_bytes = fan_out * 4
        if len(buf) - offset < w_bytes + b_bytes:
            raise TruncatedPayloadError("MAP1 parameter payload truncated")
        w = np.frombuffer(buf, dtype="<f4", count=fan_out * fan_in, offset=offset)
        offset += w_bytes
        bias = np.frombuffer(buf, dtype="<f4", count=fan_out, offset=offset)
        offset += b_bytes
        weights.append(w.reshape(fan_out, fan_in))
        biases.append(bias)
    if offset != len(buf):
        raise CorruptRecordError(
            f"MAP1 file has {len(buf) - offset} trailing bytes past the payload"
        )

    config = MapperConfig(
        input_dim=shapes[0][0],
        hidden_dims=tuple(fo for _, fo in shapes[:-1]),
        output_dim=shapes[-1][1],
    )
    return MapperNetwork(config, weights, biases)
