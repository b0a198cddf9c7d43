"""Turns ContentRecords into model inputs and lays out the rolling periods."""

import datetime as dt
import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from sklearn.utils import murmurhash3_32

from components.dataset import (
    ContentCatalog,
    ContentRecord,
    ContentType,
    LogSource,
    Period,
    PopularityLabel,
    ViewLogIndex,
    build_period_grid,
    label_hot_cold,
    timeline_bounds,
)
from utils.exceptions import ValidationError
from utils.helpers import WindowConfig

logger = logging.getLogger(__name__)

WindowSpec = WindowConfig

CATEGORICAL_FIELDS = (
    "payment",
    "program_type",
    "genre",
    "age_limit",
    "channel",
    "release_weekday",
    "release_month",
)
NUMERIC_FIELDS = ("playtime", "episode_count", "related_view")
TEXT_BUCKETS = 16384
STD_FLOOR = 1e-8
OOV_INDEX = 0


class LeakageError(ValidationError):
    """A feature was requested with information from on/after the release date"""


def categorical_values(content: ContentRecord) -> Tuple[str, ...]:
    return (
        content.payment,
        content.program_type,
        content.genre,
        content.age_limit,
        content.channel,
        str(content.release_date.weekday()),
        f"{content.release_date.month:02d}",
    )


@dataclass(frozen=True)
class Vocabulary:
    """Sorted levels of one categorical variable; index 0 is reserved for OOV"""

    name: str
    levels: Tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "_positions", {level: i + 1 for i, level in enumerate(self.levels)})

    @property
    def size(self) -> int:
        return len(self.levels) + 1

    def index(self, level: str) -> int:
        return self._positions.get(level, OOV_INDEX)


@dataclass(frozen=True)
class VocabularySet:
    vocabularies: Tuple[Vocabulary, ...]

    @property
    def sizes(self) -> Tuple[int, ...]:
        return tuple(v.size for v in self.vocabularies)

    def encode(self, content: ContentRecord) -> Tuple[int, ...]:
        return tuple(v.index(level) for v, level in zip(self.vocabularies, categorical_values(content)))

    def to_dict(self) -> Dict[str, List[str]]:
        return {v.name: list(v.levels) for v in self.vocabularies}

    @classmethod
    def from_dict(cls, data: Dict[str, List[str]]) -> "VocabularySet":
        return cls(tuple(Vocabulary(name, tuple(data[name])) for name in CATEGORICAL_FIELDS))


def build_vocab(contents: Sequence[ContentRecord]) -> VocabularySet:
    """One vocabulary per categorical variable, levels sorted lexicographically"""
    if not contents:
        raise ValidationError("cannot build vocabularies from an empty training set")
    columns = list(zip(*(categorical_values(c) for c in contents)))
    return VocabularySet(tuple(Vocabulary(name, tuple(sorted(set(col)))) for name, col in zip(CATEGORICAL_FIELDS, columns)))


@dataclass(frozen=True)
class NumericScaler:
    mean: Tuple[float, ...] = (0.0, 0.0, 0.0)
    std: Tuple[float, ...] = (1.0, 1.0, 1.0)

    @classmethod
    def fit(cls, rows: np.ndarray) -> "NumericScaler":
        rows = np.asarray(rows, dtype=float).reshape(-1, len(NUMERIC_FIELDS))
        if len(rows) == 0:
            return cls()
        std = np.maximum(rows.std(axis=0), STD_FLOOR)
        return cls(tuple(float(m) for m in rows.mean(axis=0)), tuple(float(s) for s in std))

    def transform(self, values: Sequence[float]) -> Tuple[float, ...]:
        return tuple((float(v) - m) / max(s, STD_FLOOR) for v, m, s in zip(values, self.mean, self.std))

    def to_dict(self) -> Dict[str, List[float]]:
        return {"mean": list(self.mean), "std": list(self.std)}

    @classmethod
    def from_dict(cls, data: Dict[str, List[float]]) -> "NumericScaler":
        return cls(tuple(data["mean"]), tuple(data["std"]))


@dataclass(frozen=True)
class FeatureVector:
    cat_indices: Tuple[int, ...]
    numeric: Tuple[float, ...]
    raw_numeric: Tuple[float, ...]
    text_indices: Tuple[Tuple[int, int], ...] = ()
    is_type_a: bool = False

    @property
    def text_total(self) -> int:
        return sum(count for _, count in self.text_indices)


def text_tokens(content: ContentRecord) -> List[str]:
    """Lowercased whitespace tokens of actors, title and keywords"""
    pieces = list(content.actors) + [content.title] + list(content.keywords)
    return [token for piece in pieces for token in piece.lower().split()]


def hash_tokens(tokens: Sequence[str], buckets: int = TEXT_BUCKETS) -> Tuple[Tuple[int, int], ...]:
    counts = Counter(murmurhash3_32(token, seed=0, positive=True) % buckets for token in tokens)
    return tuple(sorted(counts.items()))


def numeric_values(content: ContentRecord, window_feature: Optional[int]) -> Tuple[float, float, float]:
    return float(content.playtime), float(content.episode_count), float(window_feature or 0)


def related_view_feature(
    content: ContentRecord,
    catalog,
    view_logs: LogSource,
    t: dt.date,
    window: int,
) -> int:
    """Views of the content's prior same-series works over [t - window, t)"""
    catalog = ContentCatalog.of(catalog, view_logs)
    if catalog.classify(content, t) != ContentType.TYPE_A:
        raise ValidationError(f"related_view is undefined for type-B content '{content.content_id}'")
    return catalog.related_view(content, t, window)


def encode(
    content: ContentRecord,
    vocab: VocabularySet,
    scaler: NumericScaler,
    window_feature: Optional[int],
    text_buckets: int = TEXT_BUCKETS,
) -> FeatureVector:
    """Encode one content; a None window feature marks a type-B content"""
    raw = numeric_values(content, window_feature)
    return FeatureVector(
        cat_indices=vocab.encode(content),
        numeric=scaler.transform(raw),
        raw_numeric=raw,
        text_indices=hash_tokens(text_tokens(content), text_buckets),
        is_type_a=window_feature is not None,
    )


class Featurizer:
    """Fitted vocabularies and scaler plus the routing-aware feature pipeline"""

    def __init__(self, vocab: VocabularySet, scaler: NumericScaler = NumericScaler(), text_buckets: int = TEXT_BUCKETS):
        self.vocab = vocab
        self.scaler = scaler
        self.text_buckets = text_buckets

    def route(self, content: ContentRecord, catalog: ContentCatalog, t: dt.date) -> ContentType:
        self.check_cutoff(content, t)
        return catalog.classify(content, t)

    @staticmethod
    def check_cutoff(content: ContentRecord, t: dt.date) -> None:
        if t > content.release_date:
            raise LeakageError(
                f"features of '{content.content_id}' requested at {t}, after its release on {content.release_date}"
            )

    def featurize(self, content: ContentRecord, catalog: ContentCatalog, t: dt.date, windows: WindowSpec) -> FeatureVector:
        route = self.route(content, catalog, t)
        window_feature = None
        if route == ContentType.TYPE_A:
            window_feature = related_view_feature(content, catalog, catalog.logs, t, windows.r_a)
        return encode(content, self.vocab, self.scaler, window_feature, self.text_buckets)

    def with_scaler(self, scaler: NumericScaler) -> "Featurizer":
        return Featurizer(self.vocab, scaler, self.text_buckets)


def tree_feature_names(vocab: VocabularySet) -> List[str]:
    names = [f"{v.name}={level}" for v in vocab.vocabularies for level in ("<oov>",) + v.levels]
    return names + list(NUMERIC_FIELDS)


def tree_row(fv: FeatureVector, cat_sizes: Sequence[int]) -> np.ndarray:
    """One-hot categorical indicators followed by the raw numerics"""
    if len(fv.cat_indices) != len(cat_sizes):
        raise ValidationError(f"expected {len(cat_sizes)} categorical indices, got {len(fv.cat_indices)}")
    row = np.zeros(sum(cat_sizes) + len(fv.raw_numeric))
    offset = 0
    for index, size in zip(fv.cat_indices, cat_sizes):
        if not 0 <= index < size:
            raise ValidationError(f"categorical index {index} outside [0, {size})")
        row[offset + index] = 1.0
        offset += size
    row[offset:] = fv.raw_numeric
    return row


def tree_matrix(fvs: Sequence[FeatureVector], cat_sizes: Sequence[int]) -> np.ndarray:
    width = sum(cat_sizes) + len(NUMERIC_FIELDS)
    if not fvs:
        return np.zeros((0, width))
    return np.vstack([tree_row(fv, cat_sizes) for fv in fvs])


@dataclass
class PeriodSplit:
    """Training history and test releases of one rolling-evaluation period"""

    index: int
    period: Period
    train_contents: List[ContentRecord]
    train_labels: Dict[str, PopularityLabel]
    test_contents: List[ContentRecord]
    period_starts: Dict[str, dt.date] = field(default_factory=dict)

    @property
    def t(self) -> dt.date:
        return self.period.start


def period_of(day: dt.date, grid: Sequence[Period]) -> Optional[Period]:
    for period in grid:
        if period.contains(day):
            return period
    return None


def history_labels(
    contents: Sequence[ContentRecord],
    index: ViewLogIndex,
    grid: Sequence[Period],
    t: dt.date,
    q: float,
    label_days: int,
) -> Dict[str, PopularityLabel]:
    """Per-period hot/cold labels of everything released before t, from logs before t"""
    labels: Dict[str, PopularityLabel] = {}
    for period in grid:
        if period.start >= t:
            break
        members = [c for c in contents if period.contains(c.release_date) and c.release_date < t]
        if not members:
            continue
        for label in label_hot_cold(index, members, period, q, label_days, cutoff=t):
            labels[label.content_id] = label
    return labels


def split_periods(
    contents: Sequence[ContentRecord],
    view_logs: LogSource,
    period_length: int,
    q: float = 0.2,
    label_days: int = 10,
) -> List[PeriodSplit]:
    """Rolling-origin splits: train on everything before a period, test on its releases.

    The first period has no history and yields no split; periods without
    releases yield a split with an empty test set.
    """
    index = ViewLogIndex.of(view_logs)
    start, end = timeline_bounds(contents, index)
    grid = build_period_grid(start, end, period_length)
    if len(grid) < 2:
        raise ValidationError(
            f"timeline of {(end - start).days} days covers fewer than 2 periods of {period_length} days"
        )

    period_starts = {}
    for content in contents:
        period = period_of(content.release_date, grid)
        if period is not None:
            period_starts[content.content_id] = period.start

    splits = []
    for k, period in enumerate(grid[1:], start=1):
        train = [c for c in contents if c.release_date < period.start]
        test = [c for c in contents if period.contains(c.release_date)]
        splits.append(
            PeriodSplit(
                index=k,
                period=period,
                train_contents=train,
                train_labels=history_labels(contents, index, grid, period.start, q, label_days),
                test_contents=test,
                period_starts=period_starts,
            )
        )
    logger.debug("Split %d days into %d periods (%d test splits)", (end - start).days, len(grid), len(splits))
    return splits
