"""Categorical-embedding classifier for standalone (type-B) contents.

Inputs: one embedding table per categorical variable (a row lookup equals the
one-hot product of the linear embedding layer), a projection of the
normalized hashed bag-of-words, and the standardized numerics. Hidden layers
use hard-sigmoid, the output a sigmoid. All parameters live in one flat
vector so any optimizer in `components.optimizers` can drive training.
"""

import base64
import logging
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import sparse

from components.featurizer import FeatureVector
from components.optimizers import Optimizer
from utils.exceptions import NonFiniteError, SingleClassError, ValidationError

logger = logging.getLogger(__name__)

PROB_CLAMP = 1e-7
HARD_SIGMOID_SLOPE = 0.2
HARD_SIGMOID_LIMIT = 2.5


def hard_sigmoid(x: np.ndarray) -> np.ndarray:
    return np.clip(HARD_SIGMOID_SLOPE * x + 0.5, 0.0, 1.0)


def hard_sigmoid_grad(x: np.ndarray) -> np.ndarray:
    return np.where(np.abs(x) < HARD_SIGMOID_LIMIT, HARD_SIGMOID_SLOPE, 0.0)


def sigmoid(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    positive = x >= 0
    out[positive] = 1.0 / (1.0 + np.exp(-x[positive]))
    e = np.exp(x[~positive])
    out[~positive] = e / (1.0 + e)
    return out


def binary_cross_entropy(p, y):
    p = np.clip(np.asarray(p, dtype=float), PROB_CLAMP, 1.0 - PROB_CLAMP)
    y = np.asarray(y, dtype=float)
    return -(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))


def loss(p: float, y: int) -> float:
    return float(binary_cross_entropy(p, y))


@dataclass(frozen=True)
class NetShape:
    cat_sizes: Tuple[int, ...]
    embed_dim: int = 30
    text_buckets: int = 16384
    text_dim: int = 30
    n_numeric: int = 3
    hidden: Tuple[int, ...] = (128, 64)
    use_embeddings: bool = True

    @property
    def categorical_width(self) -> int:
        if self.use_embeddings:
            return len(self.cat_sizes) * self.embed_dim
        return sum(self.cat_sizes)

    @property
    def input_dim(self) -> int:
        return self.categorical_width + self.text_dim + self.n_numeric

    def layout(self) -> List[Tuple[str, Tuple[int, ...]]]:
        entries: List[Tuple[str, Tuple[int, ...]]] = []
        if self.use_embeddings:
            entries += [(f"embedding_{i}", (size, self.embed_dim)) for i, size in enumerate(self.cat_sizes)]
        entries.append(("text_projection", (self.text_buckets, self.text_dim)))
        fan_in = self.input_dim
        for j, width in enumerate(self.hidden):
            entries += [(f"dense_{j}/kernel", (fan_in, width)), (f"dense_{j}/bias", (width,))]
            fan_in = width
        entries += [("output/kernel", (fan_in, 1)), ("output/bias", (1,))]
        return entries

    def to_dict(self) -> Dict:
        data = asdict(self)
        data["cat_sizes"] = list(self.cat_sizes)
        data["hidden"] = list(self.hidden)
        return data

    @classmethod
    def from_dict(cls, data: Dict) -> "NetShape":
        return cls(**{**data, "cat_sizes": tuple(data["cat_sizes"]), "hidden": tuple(data["hidden"])})


@dataclass
class NetBatch:
    cat: np.ndarray
    text: sparse.csr_matrix
    numeric: np.ndarray

    @classmethod
    def from_vectors(cls, fvs: Sequence[FeatureVector], text_buckets: int) -> "NetBatch":
        rows, cols, values = [], [], []
        for r, fv in enumerate(fvs):
            total = fv.text_total
            for bucket, count in fv.text_indices:
                if not 0 <= bucket < text_buckets:
                    raise ValidationError(f"text bucket {bucket} outside [0, {text_buckets})")
                rows.append(r)
                cols.append(bucket)
                values.append(count / total)
        text = sparse.csr_matrix((values, (rows, cols)), shape=(len(fvs), text_buckets), dtype=float)
        return cls(
            cat=np.array([fv.cat_indices for fv in fvs], dtype=np.int64).reshape(len(fvs), -1),
            text=text,
            numeric=np.array([fv.numeric for fv in fvs], dtype=float).reshape(len(fvs), -1),
        )

    def subset(self, idx: np.ndarray) -> "NetBatch":
        return NetBatch(self.cat[idx], self.text[idx], self.numeric[idx])

    def __len__(self) -> int:
        return self.cat.shape[0]


@dataclass
class ForwardCache:
    inputs: List[np.ndarray] = field(default_factory=list)
    pre_activations: List[np.ndarray] = field(default_factory=list)
    logits: Optional[np.ndarray] = None
    probabilities: Optional[np.ndarray] = None


class EmbeddingNet:
    """Embedding tables + text projection + hard-sigmoid dense stack + sigmoid head"""

    def __init__(self, shape: NetShape, params: Optional[np.ndarray] = None):
        self.shape = shape
        self.layout: Dict[str, Tuple[int, Tuple[int, ...]]] = {}
        offset = 0
        for name, dims in shape.layout():
            self.layout[name] = (offset, dims)
            offset += int(np.prod(dims))
        self.size = offset
        if params is None:
            params = np.zeros(self.size)
        params = np.asarray(params, dtype=float)
        if params.shape != (self.size,):
            raise ValidationError(f"expected {self.size} parameters, got {params.shape}")
        self.params = params.copy()

    @classmethod
    def initialize(cls, shape: NetShape, seed: int, init_scale: float = 0.05) -> "EmbeddingNet":
        """Uniform embeddings, Glorot-uniform dense kernels, zero biases"""
        rng = np.random.default_rng(seed)
        net = cls(shape)
        for name, (_, dims) in net.layout.items():
            if name.endswith("/bias"):
                continue
            if name.endswith("/kernel"):
                limit = np.sqrt(6.0 / (dims[0] + dims[1]))
            else:
                limit = init_scale
            net.view(name)[...] = rng.uniform(-limit, limit, size=dims)
        return net

    def view(self, name: str, params: Optional[np.ndarray] = None) -> np.ndarray:
        offset, dims = self.layout[name]
        source = self.params if params is None else params
        return source[offset:offset + int(np.prod(dims))].reshape(dims)

    def copy(self) -> "EmbeddingNet":
        return EmbeddingNet(self.shape, self.params)

    def embedding_lookup(self, variable: int, index: int) -> np.ndarray:
        return self.view(f"embedding_{variable}")[index]

    def _check_indices(self, cat: np.ndarray) -> None:
        for i, size in enumerate(self.shape.cat_sizes):
            column = cat[:, i]
            if column.size and (column.min() < 0 or column.max() >= size):
                raise ValidationError(f"categorical index outside vocabulary range for variable {i} (size {size})")

    def _categorical_input(self, cat: np.ndarray) -> np.ndarray:
        if self.shape.use_embeddings:
            return np.hstack([self.view(f"embedding_{i}")[cat[:, i]] for i in range(len(self.shape.cat_sizes))])
        onehot = np.zeros((cat.shape[0], sum(self.shape.cat_sizes)))
        offsets = np.concatenate([[0], np.cumsum(self.shape.cat_sizes)[:-1]]).astype(np.int64)
        rows = np.arange(cat.shape[0])
        for i, offset in enumerate(offsets):
            onehot[rows, offset + cat[:, i]] = 1.0
        return onehot

    def forward_batch(self, batch: NetBatch) -> ForwardCache:
        if batch.cat.shape[1] != len(self.shape.cat_sizes):
            raise ValidationError(f"expected {len(self.shape.cat_sizes)} categorical columns, got {batch.cat.shape[1]}")
        self._check_indices(batch.cat)
        text = np.asarray(batch.text @ self.view("text_projection"))
        x = np.hstack([self._categorical_input(batch.cat), text, batch.numeric])

        cache = ForwardCache()
        for j in range(len(self.shape.hidden)):
            a = x @ self.view(f"dense_{j}/kernel") + self.view(f"dense_{j}/bias")
            cache.inputs.append(x)
            cache.pre_activations.append(a)
            x = hard_sigmoid(a)
        cache.inputs.append(x)
        logits = (x @ self.view("output/kernel") + self.view("output/bias"))[:, 0]
        if not np.all(np.isfinite(logits)):
            raise NonFiniteError("output layer")
        cache.logits = logits
        cache.probabilities = sigmoid(logits)
        return cache

    def predict_proba(self, batch: NetBatch) -> np.ndarray:
        return self.forward_batch(batch).probabilities

    def backward_batch(self, batch: NetBatch, y: np.ndarray, cache: Optional[ForwardCache] = None) -> np.ndarray:
        """Gradient of the mean clamped cross-entropy w.r.t. the flat parameters"""
        cache = cache or self.forward_batch(batch)
        y = np.asarray(y, dtype=float)
        p = cache.probabilities
        n = len(y)
        inside = (p > PROB_CLAMP) & (p < 1.0 - PROB_CLAMP)
        delta = (np.where(inside, p - y, 0.0) / n)[:, None]

        grad = np.zeros(self.size)
        self.view("output/kernel", grad)[...] = cache.inputs[-1].T @ delta
        self.view("output/bias", grad)[...] = delta.sum(axis=0)
        upstream = delta @ self.view("output/kernel").T

        for j in reversed(range(len(self.shape.hidden))):
            da = upstream * hard_sigmoid_grad(cache.pre_activations[j])
            self.view(f"dense_{j}/kernel", grad)[...] = cache.inputs[j].T @ da
            self.view(f"dense_{j}/bias", grad)[...] = da.sum(axis=0)
            upstream = da @ self.view(f"dense_{j}/kernel").T
            if not np.all(np.isfinite(upstream)):
                raise NonFiniteError(f"dense_{j} backward")

        width = self.shape.categorical_width
        d_cat = upstream[:, :width]
        d_text = upstream[:, width:width + self.shape.text_dim]
        if self.shape.use_embeddings:
            d = self.shape.embed_dim
            for i in range(len(self.shape.cat_sizes)):
                np.add.at(self.view(f"embedding_{i}", grad), batch.cat[:, i], d_cat[:, i * d:(i + 1) * d])
        self.view("text_projection", grad)[...] = np.asarray(batch.text.T @ d_text)

        if not np.all(np.isfinite(grad)):
            raise NonFiniteError("parameter gradient")
        return grad

    def mean_loss(self, batch: NetBatch, y: np.ndarray) -> float:
        return float(np.mean(binary_cross_entropy(self.predict_proba(batch), y)))

    def to_dict(self) -> Dict:
        parameters = []
        for name, (_, dims) in self.layout.items():
            data = np.ascontiguousarray(self.view(name), dtype="<f8").tobytes()
            parameters.append({"name": name, "shape": list(dims), "data": base64.b64encode(data).decode("ascii")})
        return {"shape": self.shape.to_dict(), "parameters": parameters}

    @classmethod
    def from_dict(cls, data: Dict) -> "EmbeddingNet":
        net = cls(NetShape.from_dict(data["shape"]))
        for entry in data["parameters"]:
            if entry["name"] not in net.layout:
                raise ValidationError(f"unknown parameter array '{entry['name']}'")
            values = np.frombuffer(base64.b64decode(entry["data"]), dtype="<f8")
            net.view(entry["name"])[...] = values.reshape(entry["shape"])
        return net


def forward(net: EmbeddingNet, fv: FeatureVector) -> float:
    return float(net.predict_proba(NetBatch.from_vectors([fv], net.shape.text_buckets))[0])


def backward(net: EmbeddingNet, fv: FeatureVector, y: int) -> np.ndarray:
    return net.backward_batch(NetBatch.from_vectors([fv], net.shape.text_buckets), np.array([y]))


@dataclass
class TrainResult:
    net: EmbeddingNet
    loss_trace: List[float]
    stopped_early: bool = False

    @property
    def epochs_run(self) -> int:
        return len(self.loss_trace) - 1


def train_nn(
    net: EmbeddingNet,
    data: Sequence[Tuple[FeatureVector, int]],
    optimizer: Optimizer,
    batch_size: int = 64,
    epochs: int = 50,
    seed: int = 0,
    patience: Optional[int] = 10,
    min_delta: float = 1e-5,
) -> TrainResult:
    """Mini-batch training on mean gradients with per-epoch seeded shuffling.

    loss_trace[0] is the full-data loss before training, loss_trace[e] the
    loss after epoch e. Stops once the epoch loss has not improved by
    `min_delta` for `patience` epochs.
    """
    if not data:
        raise SingleClassError("no training rows for the embedding network")
    labels = np.array([label for _, label in data], dtype=float)
    if len(np.unique(labels)) < 2:
        raise SingleClassError(f"embedding network needs both classes, got only label {int(labels[0])}")

    batch = NetBatch.from_vectors([fv for fv, _ in data], net.shape.text_buckets)
    rng = np.random.default_rng(seed)
    trace = [net.mean_loss(batch, labels)]
    best = trace[0]
    stale = 0
    stopped_early = False

    for epoch in range(1, epochs + 1):
        order = rng.permutation(len(labels))
        for start in range(0, len(order), batch_size):
            idx = order[start:start + batch_size]
            gradient = net.backward_batch(batch.subset(idx), labels[idx])
            updated = optimizer.step(gradient, net.params)
            if not np.all(np.isfinite(updated)):
                raise NonFiniteError(f"{optimizer.name} update at epoch {epoch}")
            net.params = updated

        epoch_loss = net.mean_loss(batch, labels)
        trace.append(epoch_loss)
        logger.debug("epoch %d/%d loss %.5f (%s)", epoch, epochs, epoch_loss, optimizer.name)

        if best - epoch_loss > min_delta:
            best = epoch_loss
            stale = 0
        else:
            stale += 1
        if patience is not None and stale >= patience:
            logger.info("Convergence criterion met after %d epochs (loss %.5f)", epoch, epoch_loss)
            stopped_early = True
            break

    return TrainResult(net=net, loss_trace=trace, stopped_early=stopped_early)
