"""Rolling per-period evaluation and the comparison experiments."""

import datetime as dt
import json
import logging
import os
from dataclasses import dataclass, field
from typing import Callable, Dict, List, NamedTuple, Optional, Sequence

import numpy as np
import pandas as pd
from sklearn.metrics import confusion_matrix

from components.dataset import ContentCatalog, ContentRecord, ContentType, LogSource, label_hot_cold
from components.featurizer import Featurizer, NumericScaler, PeriodSplit, build_vocab, split_periods
from components.hybrid import (
    Prediction,
    build_training_set,
    featurize_rows,
    predict_many,
    rescale,
    train_hybrid,
    train_net,
)
from utils.exceptions import TrainingError, ValidationError
from utils.helpers import ConfigManager, RunConfig, WindowConfig

logger = logging.getLogger(__name__)

Predictor = Callable[[PeriodSplit, ContentCatalog], Sequence[Prediction]]
OPTIMIZER_NAMES = ("ftrl", "adam", "rmsprop", "fobos")
DEFAULT_SWEEP = (1, 5, 10, 20, 30, 40)


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @classmethod
    def from_labels(cls, y_true: Sequence[int], y_pred: Sequence[int]) -> "ConfusionCounts":
        if len(y_true) == 0:
            return cls()
        tn, fp, fn, tp = confusion_matrix(y_true, y_pred, labels=[0, 1]).ravel()
        return cls(int(tp), int(fp), int(tn), int(fn))

    def to_dict(self) -> Dict[str, int]:
        return {"tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn}


class Metrics(NamedTuple):
    precision: Optional[float]
    recall: Optional[float]
    f1: Optional[float]

    @property
    def defined(self) -> bool:
        return None not in self

    def zero_filled(self) -> "Metrics":
        return Metrics(*(0.0 if value is None else value for value in self))

    def to_dict(self) -> Dict[str, Optional[float]]:
        return self._asdict()


def _ratio(numerator: int, denominator: int) -> Optional[float]:
    return None if denominator == 0 else numerator / denominator


def metrics(c: ConfusionCounts) -> Metrics:
    """Precision, recall and F1; 0/0 leaves a metric undefined (None)"""
    precision = _ratio(c.tp, c.tp + c.fp)
    recall = _ratio(c.tp, c.tp + c.fn)
    if precision is None or recall is None:
        f1 = None
    else:
        f1 = 2 * c.tp / (2 * c.tp + c.fp + c.fn)
    return Metrics(precision, recall, f1)


def macro_average(rows: Sequence[Metrics]) -> Metrics:
    """Arithmetic mean over periods whose metrics are all defined"""
    included = [m for m in rows if m.defined]
    if not included:
        return Metrics(None, None, None)
    return Metrics(*(float(np.mean([m[i] for m in included])) for i in range(3)))


@dataclass
class PeriodResult:
    index: int
    start: dt.date
    end: dt.date
    n_test: int
    counts: ConfusionCounts
    metrics: Metrics
    by_type: Dict[str, Metrics] = field(default_factory=dict)

    def to_dict(self) -> Dict:
        return {
            "index": self.index,
            "start": self.start.isoformat(),
            "end": self.end.isoformat(),
            "n_test": self.n_test,
            "counts": self.counts.to_dict(),
            "metrics": self.metrics.to_dict(),
            "by_type": {route: m.to_dict() for route, m in sorted(self.by_type.items())},
        }


@dataclass
class SkippedPeriod:
    index: int
    start: dt.date
    reason: str

    def to_dict(self) -> Dict:
        return {"index": self.index, "start": self.start.isoformat(), "reason": self.reason}


@dataclass
class EvalReport:
    name: str
    seed: int
    config_hash: str
    periods: List[PeriodResult] = field(default_factory=list)
    skipped: List[SkippedPeriod] = field(default_factory=list)
    zero_undefined_metrics: bool = False

    def _period_metrics(self, pick: Callable[[PeriodResult], Optional[Metrics]]) -> List[Metrics]:
        rows = [m for m in (pick(p) for p in self.periods) if m is not None]
        if self.zero_undefined_metrics:
            rows = [m.zero_filled() for m in rows]
        return rows

    @property
    def macro(self) -> Metrics:
        return macro_average(self._period_metrics(lambda p: p.metrics))

    def macro_for(self, route: ContentType) -> Metrics:
        return macro_average(self._period_metrics(lambda p: p.by_type.get(route.value)))

    def to_dict(self) -> Dict:
        return {
            "name": self.name,
            "seed": self.seed,
            "config_hash": self.config_hash,
            "macro": self.macro.to_dict(),
            "macro_by_type": {route.value: self.macro_for(route).to_dict() for route in ContentType},
            "periods": [p.to_dict() for p in self.periods],
            "skipped": [s.to_dict() for s in self.skipped],
        }


def hybrid_predictor(config: RunConfig, seed: int, mode: str = "hybrid") -> Predictor:
    """Train on the split's history, then score its test releases at the period start"""

    def run(split: PeriodSplit, catalog: ContentCatalog) -> List[Prediction]:
        model = train_hybrid(
            split.train_contents,
            catalog.logs,
            config,
            seed=seed,
            at=split.t,
            mode=mode,
            labels=split.train_labels,
            period_starts=split.period_starts,
            catalog=catalog,
        )
        return predict_many(model, [(c, split.t) for c in split.test_contents], catalog)

    return run


def _score_period(
    split: PeriodSplit,
    predictions: Sequence[Prediction],
    truth: Dict[str, int],
    zero_undefined: bool,
) -> Optional[PeriodResult]:
    y_true = [truth[p.content_id] for p in predictions]
    y_pred = [int(p.is_hot) for p in predictions]
    counts = ConfusionCounts.from_labels(y_true, y_pred)
    by_type = {}
    for route in ContentType:
        members = [i for i, p in enumerate(predictions) if p.route == route]
        if members:
            by_type[route.value] = metrics(
                ConfusionCounts.from_labels([y_true[i] for i in members], [y_pred[i] for i in members])
            )
    result = metrics(counts)
    if not result.defined and not zero_undefined:
        return None
    return PeriodResult(split.index, split.period.start, split.period.end, len(predictions), counts, result, by_type)


def evaluate_rolling(
    predictor: Predictor,
    contents: Sequence[ContentRecord],
    view_logs: LogSource,
    splits: Sequence[PeriodSplit],
    config: RunConfig = RunConfig(),
    name: str = "hybrid",
    route: Optional[ContentType] = None,
) -> EvalReport:
    """Per period: fit on the past, predict the period's releases, score against realized labels.

    `route` restricts scoring to one content type. Periods with no test
    contents, a failed fit, or undefined metrics are skipped with a reason.
    """
    catalog = ContentCatalog(contents, view_logs)
    report = EvalReport(
        name=name,
        seed=config.seed,
        config_hash=ConfigManager.config_hash(config),
        zero_undefined_metrics=config.zero_undefined_metrics,
    )

    for split in splits:
        if not split.test_contents:
            report.skipped.append(SkippedPeriod(split.index, split.t, "no test contents"))
            continue
        try:
            predictions = list(predictor(split, catalog))
        except TrainingError as e:
            logger.info("Period %d (%s) skipped: %s", split.index, split.t, e)
            report.skipped.append(SkippedPeriod(split.index, split.t, f"training failed: {e}"))
            continue

        if route is not None:
            predictions = [p for p in predictions if p.route == route]
            if not predictions:
                report.skipped.append(SkippedPeriod(split.index, split.t, f"no type-{route.value} test contents"))
                continue

        truth = {
            label.content_id: label.label
            for label in label_hot_cold(catalog.logs, split.test_contents, split.period, config.q, config.label_days)
        }
        result = _score_period(split, predictions, truth, config.zero_undefined_metrics)
        if result is None:
            logger.info("Period %d (%s) skipped: undefined metric", split.index, split.t)
            report.skipped.append(SkippedPeriod(split.index, split.t, "undefined metric"))
            continue
        report.periods.append(result)
        logger.debug("Period %d F1 %s", split.index, result.metrics.f1)

    if not report.periods:
        raise TrainingError(f"all {len(splits)} evaluation periods were skipped")
    return report


def rolling_splits(contents: Sequence[ContentRecord], view_logs: LogSource, config: RunConfig) -> List[PeriodSplit]:
    return split_periods(contents, view_logs, config.period_length, config.q, config.label_days)


def evaluate_model(
    contents: Sequence[ContentRecord],
    view_logs: LogSource,
    config: RunConfig = RunConfig(),
    mode: str = "hybrid",
    splits: Optional[Sequence[PeriodSplit]] = None,
    route: Optional[ContentType] = None,
) -> EvalReport:
    splits = splits if splits is not None else rolling_splits(contents, view_logs, config)
    return evaluate_rolling(hybrid_predictor(config, config.seed, mode), contents, view_logs, splits, config, mode, route)


@dataclass
class AblationResult:
    embedding: EvalReport
    onehot: EvalReport

    @property
    def f1_pair(self) -> Dict[str, Optional[float]]:
        return {
            "embedding": self.embedding.macro_for(ContentType.TYPE_B).f1,
            "onehot": self.onehot.macro_for(ContentType.TYPE_B).f1,
        }


def run_ablation_embedding(contents: Sequence[ContentRecord], view_logs: LogSource, config: RunConfig = RunConfig()) -> AblationResult:
    """Hybrid evaluated twice, the net with embedding tables and with direct one-hot input"""
    splits = rolling_splits(contents, view_logs, config)
    reports = {}
    for variant, use_embeddings in (("embedding", True), ("onehot", False)):
        variant_config = config.model_copy(update={"net": config.net.model_copy(update={"use_embeddings": use_embeddings})})
        reports[variant] = evaluate_rolling(
            hybrid_predictor(variant_config, config.seed), contents, view_logs, splits, variant_config, variant
        )
    return AblationResult(**reports)


def run_optimizer_comparison(
    contents: Sequence[ContentRecord],
    view_logs: LogSource,
    config: RunConfig = RunConfig(),
    at: Optional[dt.date] = None,
    optimizers: Sequence[str] = OPTIMIZER_NAMES,
) -> Dict[str, List[float]]:
    """Per-optimizer training loss traces on U_B, same init, data and batch order"""
    training = build_training_set(contents, view_logs, config, at)
    rows = training.rows_b
    if not rows:
        raise TrainingError("U_B empty: no type-B contents to train the embedding net on")
    vocab = build_vocab([row.content for row in rows])
    fvs = featurize_rows(Featurizer(vocab, text_buckets=config.net.text_buckets), training.catalog, rows, config.windows)
    scaler = NumericScaler.fit(np.array([fv.raw_numeric for fv in fvs]))
    fvs = rescale(fvs, scaler)
    labels = [row.label for row in rows]

    fixed_epochs = config.model_copy(update={"net": config.net.model_copy(update={"patience": None})})
    traces = {}
    for name in optimizers:
        traces[name] = train_net(fvs, labels, vocab, fixed_epochs, config.seed, optimizer_name=name).loss_trace
        logger.info("%s: loss %.4f -> %.4f", name, traces[name][0], traces[name][-1])
    return traces


def run_window_sweep(
    contents: Sequence[ContentRecord],
    view_logs: LogSource,
    r_values: Sequence[int] = DEFAULT_SWEEP,
    config: RunConfig = RunConfig(),
) -> pd.DataFrame:
    """Macro F1 (overall, type A, type B) as r_A = r_B = r varies"""
    splits = rolling_splits(contents, view_logs, config)
    rows = []
    for r in r_values:
        if r < 0:
            raise ValidationError(f"observation window must be non-negative, got {r}")
        if r == 0:
            rows.append({"r": 0, "f1": 0.0, "f1_type_a": 0.0, "f1_type_b": 0.0, "periods": 0})
            continue
        r_config = config.model_copy(update={"windows": WindowConfig(r_a=r, r_b=r)})
        try:
            report = evaluate_rolling(hybrid_predictor(r_config, config.seed), contents, view_logs, splits, r_config, f"r={r}")
        except TrainingError as e:
            logger.warning("r=%d: %s", r, e)
            rows.append({"r": r, "f1": 0.0, "f1_type_a": 0.0, "f1_type_b": 0.0, "periods": 0})
            continue
        rows.append(
            {
                "r": r,
                "f1": report.macro.f1 or 0.0,
                "f1_type_a": report.macro_for(ContentType.TYPE_A).f1 or 0.0,
                "f1_type_b": report.macro_for(ContentType.TYPE_B).f1 or 0.0,
                "periods": len(report.periods),
            }
        )
        logger.info("r=%d: macro F1 %.3f", r, rows[-1]["f1"])
    return pd.DataFrame(rows, columns=["r", "f1", "f1_type_a", "f1_type_b", "periods"])


def run_model_comparison(contents: Sequence[ContentRecord], view_logs: LogSource, config: RunConfig = RunConfig()) -> Dict[str, EvalReport]:
    """Hybrid against GBDT-on-everything and net-on-everything"""
    splits = rolling_splits(contents, view_logs, config)
    return {mode: evaluate_model(contents, view_logs, config, mode, splits) for mode in ("hybrid", "gbdt", "net")}


def _ensure_parent(path: str) -> None:
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)


def write_json(data: Dict, path: str) -> None:
    _ensure_parent(path)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(data, f, sort_keys=True, indent=2)
        f.write("\n")


def write_report(report: EvalReport, path: str) -> None:
    write_json(report.to_dict(), path)


def periods_frame(report: EvalReport) -> pd.DataFrame:
    columns = ["period", "start", "n_test", "tp", "fp", "tn", "fn", "precision", "recall", "f1"]
    rows = [
        {"period": p.index, "start": p.start.isoformat(), "n_test": p.n_test, **p.counts.to_dict(), **p.metrics.to_dict()}
        for p in report.periods
    ]
    return pd.DataFrame(rows, columns=columns)


def loss_trace_frame(trace: Sequence[float]) -> pd.DataFrame:
    return pd.DataFrame({"epoch": np.arange(len(trace)), "loss": list(trace)})


def write_csv(frame: pd.DataFrame, path: str) -> None:
    _ensure_parent(path)
    frame.to_csv(path, index=False, lineterminator="\n")
