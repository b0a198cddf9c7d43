"""Routes new contents to the boosted trees (type A) or the embedding net (type B).

Training follows the rolling cutoff t: U_A holds labeled type-A contents
released in [t - r_A, t), U_B labeled type-B contents released in
[t - r_B, t). Every content is featurized at the start of its release period.
"""

import dataclasses
import datetime as dt
import json
import logging
import os
from dataclasses import dataclass, field
from typing import Dict, List, Literal, Mapping, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from components.dataset import (
    ContentCatalog,
    ContentRecord,
    ContentType,
    LogSource,
    PopularityLabel,
    ViewLogIndex,
    build_period_grid,
    hot_count,
    timeline_bounds,
)
from components.embedding_net import PROB_CLAMP, EmbeddingNet, NetBatch, NetShape, train_nn
from components.featurizer import (
    FeatureVector,
    Featurizer,
    NumericScaler,
    VocabularySet,
    build_vocab,
    history_labels,
    period_of,
    tree_feature_names,
    tree_matrix,
)
from components.gbdt import BoostedEnsemble, feature_importance, fit_gbdt, predict_gbdt
from components.optimizers import build_optimizer
from utils.exceptions import ArtifactError, DegenerateScoresError, EmptyPartitionError, ValidationError
from utils.helpers import ConfigManager, RunConfig, WindowConfig

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
Mode = Literal["hybrid", "gbdt", "net"]
MODES = ("hybrid", "gbdt", "net")


class TrainingRow(NamedTuple):
    content: ContentRecord
    t: dt.date
    label: int
    route: ContentType


@dataclass
class TrainingSet:
    """U_A / U_B at one cutoff"""

    t: dt.date
    catalog: ContentCatalog
    rows_a: List[TrainingRow]
    rows_b: List[TrainingRow]

    @property
    def rows(self) -> List[TrainingRow]:
        return sorted(self.rows_a + self.rows_b, key=lambda r: (r.content.release_date, r.content.content_id))


@dataclass
class Prediction:
    content_id: str
    probability: float
    label: str
    route: ContentType
    model: str

    @property
    def is_hot(self) -> bool:
        return self.label == "hot"

    def to_dict(self) -> Dict:
        return {
            "content_id": self.content_id,
            "probability": self.probability,
            "label": self.label,
            "route": self.route.value,
        }


@dataclass
class HybridModel:
    featurizer: Featurizer
    windows: WindowConfig
    threshold: float
    config: RunConfig
    gbdt: Optional[BoostedEnsemble] = None
    net: Optional[EmbeddingNet] = None
    mode: str = "hybrid"
    trained_at: Optional[dt.date] = None
    loss_trace: List[float] = field(default_factory=list)
    importance: Dict[str, float] = field(default_factory=dict)

    def scorer_for(self, route: ContentType) -> str:
        """Name of the sub-model consulted for a route"""
        if self.mode == "hybrid":
            return "gbdt" if route == ContentType.TYPE_A else "net"
        return self.mode

    def with_threshold(self, threshold: float) -> "HybridModel":
        return dataclasses.replace(self, threshold=threshold)


def resolve_period_starts(contents: Sequence[ContentRecord], index: ViewLogIndex, period_length: int, at: dt.date) -> Dict[str, dt.date]:
    start, end = timeline_bounds(contents, index)
    grid = build_period_grid(start, max(end, at), period_length)
    starts = {}
    for content in contents:
        period = period_of(content.release_date, grid)
        if period is not None:
            starts[content.content_id] = period.start
    return starts


def build_training_set(
    contents: Sequence[ContentRecord],
    view_logs: LogSource,
    config: RunConfig,
    at: Optional[dt.date] = None,
    labels: Optional[Mapping[str, PopularityLabel]] = None,
    period_starts: Optional[Mapping[str, dt.date]] = None,
    catalog: Optional[ContentCatalog] = None,
) -> TrainingSet:
    """Partition labeled history into U_A and U_B using each route's window"""
    catalog = catalog or ContentCatalog(contents, view_logs)
    index = catalog.logs
    if at is None:
        at = timeline_bounds(contents, index)[1]
    if period_starts is None:
        period_starts = resolve_period_starts(contents, index, config.period_length, at)
    if labels is None:
        start, end = timeline_bounds(contents, index)
        grid = build_period_grid(start, max(end, at), config.period_length)
        labels = history_labels(contents, index, grid, at, config.q, config.label_days)

    windows = config.windows
    rows_a, rows_b = [], []
    for content in sorted(contents, key=lambda c: (c.release_date, c.content_id)):
        label = labels.get(content.content_id)
        if label is None or content.content_id not in period_starts:
            continue
        t_content = period_starts[content.content_id]
        route = catalog.classify(content, t_content)
        window = windows.r_a if route == ContentType.TYPE_A else windows.r_b
        if not at - dt.timedelta(days=window) <= content.release_date < at:
            continue
        row = TrainingRow(content, t_content, label.label, route)
        (rows_a if route == ContentType.TYPE_A else rows_b).append(row)

    logger.debug("Training set at %s: |U_A|=%d |U_B|=%d", at, len(rows_a), len(rows_b))
    return TrainingSet(at, catalog, rows_a, rows_b)


def featurize_rows(featurizer: Featurizer, catalog: ContentCatalog, rows: Sequence[TrainingRow], windows: WindowConfig) -> List[FeatureVector]:
    return [featurizer.featurize(row.content, catalog, row.t, windows) for row in rows]


def rescale(fvs: Sequence[FeatureVector], scaler: NumericScaler) -> List[FeatureVector]:
    return [dataclasses.replace(fv, numeric=scaler.transform(fv.raw_numeric)) for fv in fvs]


def _seeds(seed: int) -> Tuple[int, int, int]:
    init_seed, shuffle_seed, tree_seed = np.random.default_rng(seed).integers(0, 2 ** 31 - 1, size=3)
    return int(init_seed), int(shuffle_seed), int(tree_seed)


def train_net(
    fvs: Sequence[FeatureVector],
    labels: Sequence[int],
    vocab: VocabularySet,
    config: RunConfig,
    seed: int,
    optimizer_name: Optional[str] = None,
    use_embeddings: Optional[bool] = None,
):
    """Fresh net on vocab-sized tables, trained with the configured optimizer"""
    net_config = config.net
    shape = NetShape(
        cat_sizes=vocab.sizes,
        embed_dim=net_config.embed_dim,
        text_buckets=net_config.text_buckets,
        text_dim=net_config.text_dim,
        hidden=tuple(net_config.hidden),
        use_embeddings=net_config.use_embeddings if use_embeddings is None else use_embeddings,
    )
    init_seed, shuffle_seed, _ = _seeds(seed)
    net = EmbeddingNet.initialize(shape, init_seed, net_config.init_scale)
    optimizer = build_optimizer(config.optimizer, optimizer_name)
    return train_nn(
        net,
        list(zip(fvs, labels)),
        optimizer,
        batch_size=net_config.batch_size,
        epochs=net_config.epochs,
        seed=shuffle_seed,
        patience=net_config.patience,
        min_delta=net_config.min_delta,
    )


def train_hybrid(
    contents: Sequence[ContentRecord],
    view_logs: LogSource,
    config: RunConfig = RunConfig(),
    seed: Optional[int] = None,
    at: Optional[dt.date] = None,
    mode: Mode = "hybrid",
    labels: Optional[Mapping[str, PopularityLabel]] = None,
    period_starts: Optional[Mapping[str, dt.date]] = None,
    catalog: Optional[ContentCatalog] = None,
) -> HybridModel:
    """Fit the boosted trees on U_A and the embedding net on U_B.

    `mode="gbdt"` / `mode="net"` fit a single model on U_A and U_B together.
    """
    if mode not in MODES:
        raise ValidationError(f"unknown model mode '{mode}'. Allowed: {', '.join(MODES)}")
    seed = config.seed if seed is None else seed
    training = build_training_set(contents, view_logs, config, at, labels, period_starts, catalog)

    if mode == "hybrid":
        if not training.rows_a:
            raise EmptyPartitionError("U_A")
        if not training.rows_b:
            raise EmptyPartitionError("U_B")
        tree_rows, net_rows = training.rows_a, training.rows_b
    elif mode == "gbdt":
        tree_rows, net_rows = training.rows, []
    else:
        tree_rows, net_rows = [], training.rows
    if not tree_rows and not net_rows:
        raise EmptyPartitionError("U")

    vocab = build_vocab([row.content for row in tree_rows + net_rows])
    featurizer = Featurizer(vocab, text_buckets=config.net.text_buckets)
    model = HybridModel(
        featurizer=featurizer,
        windows=config.windows,
        threshold=config.threshold,
        config=config.model_copy(update={"seed": seed}),
        mode=mode,
        trained_at=training.t,
    )

    if tree_rows:
        fvs = featurize_rows(featurizer, training.catalog, tree_rows, config.windows)
        _, _, tree_seed = _seeds(seed)
        model.gbdt = fit_gbdt(
            list(zip(fvs, [row.label for row in tree_rows])),
            config.gbdt,
            cat_sizes=vocab.sizes,
            seed=tree_seed,
            feature_names=tree_feature_names(vocab),
        )
        model.importance = feature_importance(model.gbdt)
        logger.info("Boosted %d trees on %d type-A rows", len(model.gbdt.trees), len(tree_rows))

    if net_rows:
        fvs = featurize_rows(featurizer, training.catalog, net_rows, config.windows)
        scaler = NumericScaler.fit(np.array([fv.raw_numeric for fv in fvs]))
        model.featurizer = featurizer.with_scaler(scaler)
        result = train_net(rescale(fvs, scaler), [row.label for row in net_rows], vocab, config, seed)
        model.net = result.net
        model.loss_trace = result.loss_trace
        logger.info(
            "Trained embedding net on %d rows for %d epochs (final loss %.4f)",
            len(net_rows), result.epochs_run, result.loss_trace[-1],
        )

    if config.threshold_mode == "quantile":
        validation = [(row.content, row.t) for row in training.rows]
        model.threshold = calibrate_threshold(model, validation, training.catalog, config.target_hot_fraction)
        logger.info("Calibrated decision threshold %.4f", model.threshold)
    return model


def predict_gbdt_many(model: BoostedEnsemble, fvs: Sequence[FeatureVector]) -> np.ndarray:
    if len(fvs) == 1:
        return np.array([predict_gbdt(model, fvs[0])])
    return model.predict_proba(tree_matrix(fvs, model.cat_sizes))


def predict_many(
    model: HybridModel,
    items: Sequence[Tuple[ContentRecord, dt.date]],
    catalog: ContentCatalog,
) -> List[Prediction]:
    """Score (content, prediction time) pairs, one sub-model per content"""
    if model.featurizer is None or model.featurizer.vocab is None:
        raise ArtifactError("model is missing featurization state (vocabularies)")

    routed: Dict[str, List[int]] = {"gbdt": [], "net": []}
    fvs, routes = [], []
    for i, (content, t) in enumerate(items):
        fv = model.featurizer.featurize(content, catalog, t, model.windows)
        route = ContentType.TYPE_A if fv.is_type_a else ContentType.TYPE_B
        fvs.append(fv)
        routes.append(route)
        routed[model.scorer_for(route)].append(i)

    probabilities = np.zeros(len(items))
    if routed["gbdt"]:
        if model.gbdt is None:
            raise ArtifactError("model has no boosted ensemble for type-A contents")
        probabilities[routed["gbdt"]] = predict_gbdt_many(model.gbdt, [fvs[i] for i in routed["gbdt"]])
    if routed["net"]:
        if model.net is None:
            raise ArtifactError("model has no embedding net for type-B contents")
        batch = NetBatch.from_vectors([fvs[i] for i in routed["net"]], model.net.shape.text_buckets)
        probabilities[routed["net"]] = model.net.predict_proba(batch)

    probabilities = np.clip(probabilities, PROB_CLAMP, 1.0 - PROB_CLAMP)
    return [
        Prediction(
            content_id=content.content_id,
            probability=float(p),
            label="hot" if p >= model.threshold else "cold",
            route=route,
            model=model.scorer_for(route),
        )
        for (content, _), p, route in zip(items, probabilities, routes)
    ]


def predict(
    model: HybridModel,
    content: ContentRecord,
    catalog,
    view_logs: LogSource,
    t: dt.date,
) -> Prediction:
    return predict_many(model, [(content, t)], ContentCatalog.of(catalog, view_logs))[0]


def quantile_threshold(scores: Sequence[float], target_hot_fraction: float = 0.2) -> float:
    """Threshold giving ceil(target * N) hot scores; boundary ties resolve toward fewer hot"""
    scores = np.asarray(scores, dtype=float)
    if scores.size == 0:
        raise ValidationError("threshold calibration needs a non-empty validation set")
    if not 0 < target_hot_fraction <= 1:
        raise ValidationError(f"target hot fraction must lie in (0, 1], got {target_hot_fraction}")
    if np.all(scores == scores[0]):
        raise DegenerateScoresError(
            f"all {scores.size} validation scores equal {scores[0]:.6g}; keep the default threshold 0.5"
        )
    k = hot_count(target_hot_fraction, scores.size)
    tau = np.sort(scores)[::-1][k - 1]
    if np.sum(scores >= tau) > k:
        tau = np.nextafter(tau, np.inf)
    return float(tau)


def calibrate_threshold(
    model: HybridModel,
    validation: Sequence[Tuple[ContentRecord, dt.date]],
    catalog: ContentCatalog,
    target_hot_fraction: float = 0.2,
) -> float:
    if not validation:
        raise ValidationError("threshold calibration needs a non-empty validation set")
    scores = [p.probability for p in predict_many(model, validation, catalog)]
    return quantile_threshold(scores, target_hot_fraction)


def new_content_catalog(
    catalog_contents: Sequence[ContentRecord],
    view_logs: LogSource,
    new_contents: Sequence[ContentRecord],
) -> ContentCatalog:
    """Catalog of known contents plus the new ones, without any log of the new ones"""
    new_ids = {c.content_id for c in new_contents}
    known = [c for c in catalog_contents if c.content_id not in new_ids]
    logs = [log for log in view_logs if log.content_id not in new_ids]
    return ContentCatalog(known + list(new_contents), logs)


def model_to_dict(model: HybridModel) -> Dict:
    return {
        "format_version": FORMAT_VERSION,
        "config": ConfigManager.to_dict(model.config),
        "mode": model.mode,
        "trained_at": model.trained_at.isoformat() if model.trained_at else None,
        "windows": model.windows.model_dump(),
        "threshold": model.threshold,
        "vocabularies": model.featurizer.vocab.to_dict(),
        "scaler": model.featurizer.scaler.to_dict(),
        "text_buckets": model.featurizer.text_buckets,
        "gbdt": model.gbdt.to_dict() if model.gbdt is not None else None,
        "net": model.net.to_dict() if model.net is not None else None,
        "feature_importance": model.importance,
        "loss_trace": model.loss_trace,
    }


def model_from_dict(data: Dict) -> HybridModel:
    version = data.get("format_version")
    if version != FORMAT_VERSION:
        raise ArtifactError(f"unsupported model format_version {version!r} (expected {FORMAT_VERSION})")
    for key in ("vocabularies", "scaler", "windows", "threshold", "config"):
        if key not in data:
            raise ArtifactError(f"model artifact is missing featurization state '{key}'")
    try:
        featurizer = Featurizer(
            VocabularySet.from_dict(data["vocabularies"]),
            NumericScaler.from_dict(data["scaler"]),
            int(data.get("text_buckets", 16384)),
        )
    except KeyError as e:
        raise ArtifactError(f"model artifact vocabularies incomplete: missing {e}") from e
    return HybridModel(
        featurizer=featurizer,
        windows=WindowConfig.model_validate(data["windows"]),
        threshold=float(data["threshold"]),
        config=ConfigManager.from_dict(data["config"]),
        gbdt=BoostedEnsemble.from_dict(data["gbdt"]) if data.get("gbdt") else None,
        net=EmbeddingNet.from_dict(data["net"]) if data.get("net") else None,
        mode=data.get("mode", "hybrid"),
        trained_at=dt.date.fromisoformat(data["trained_at"]) if data.get("trained_at") else None,
        loss_trace=list(data.get("loss_trace", [])),
        importance=dict(data.get("feature_importance", {})),
    )


def save_model(model: HybridModel, path: str) -> None:
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(model_to_dict(model), f, sort_keys=True, indent=1)
        f.write("\n")


def load_model(path: str) -> HybridModel:
    if not os.path.exists(path):
        raise ArtifactError(f"model artifact not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise ArtifactError(f"model artifact is not valid JSON: {e}") from e
    return model_from_dict(data)
