"""Content/view-log data model, hot/cold labeling and A/B typing."""

import datetime as dt
import logging
import math
from collections import defaultdict
from enum import Enum
from fractions import Fraction
from typing import Dict, Iterable, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, field_validator

from utils.exceptions import DuplicateIdError, ValidationError

logger = logging.getLogger(__name__)

DEFAULT_HOT_FRACTION = 0.2


class ContentType(str, Enum):
    TYPE_A = "A"
    TYPE_B = "B"


class ContentRecord(BaseModel):
    """Pre-release metadata of one content item"""

    model_config = ConfigDict(extra="forbid", frozen=True)

    content_id: str = Field(min_length=1)
    series_id: Optional[str] = None
    payment: str
    program_type: str
    genre: str
    playtime: int = Field(gt=0)
    episode_count: int = Field(ge=0)
    age_limit: str
    channel: str
    actors: Tuple[str, ...] = ()
    title: str
    keywords: Tuple[str, ...] = ()
    release_date: dt.date
    related_view: Optional[int] = Field(None, ge=0)

    @field_validator("payment", "program_type", "genre", "age_limit", "channel", mode="before")
    @classmethod
    def _level_as_text(cls, value):
        # age limits often arrive as bare numbers (19, 15)
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return str(value)
        return value


class ViewLog(BaseModel):
    """View count of one content on one day"""

    model_config = ConfigDict(extra="forbid", frozen=True)

    content_id: str = Field(min_length=1)
    date: dt.date
    view_count: int = Field(ge=0)


class PopularityLabel(BaseModel):
    model_config = ConfigDict(frozen=True)

    content_id: str
    label: int = Field(ge=0, le=1)
    window_total_views: int = Field(ge=0)


class Period(NamedTuple):
    """Half-open date range [start, end)"""

    start: dt.date
    end: dt.date

    def contains(self, day: dt.date) -> bool:
        return self.start <= day < self.end

    @property
    def days(self) -> int:
        return (self.end - self.start).days


class ViewLogIndex:
    """Per-content cumulative view counts for fast date-range sums"""

    def __init__(self, view_logs: Iterable[ViewLog] = ()):
        logs = list(view_logs)
        frame = pd.DataFrame(
            {
                "content_id": [log.content_id for log in logs],
                "ordinal": np.array([log.date.toordinal() for log in logs], dtype=np.int64),
                "view_count": np.array([log.view_count for log in logs], dtype=np.int64),
            }
        )
        self._build(frame)

    @classmethod
    def from_frame(cls, frame: pd.DataFrame) -> "ViewLogIndex":
        """Build from a frame with content_id / ordinal / view_count columns"""
        index = cls.__new__(cls)
        index._build(frame[["content_id", "ordinal", "view_count"]].copy())
        return index

    @classmethod
    def of(cls, view_logs: Union["ViewLogIndex", Iterable[ViewLog]]) -> "ViewLogIndex":
        if isinstance(view_logs, cls):
            return view_logs
        return cls(view_logs)

    def _build(self, frame: pd.DataFrame) -> None:
        frame = frame.sort_values(["content_id", "ordinal"], kind="mergesort")
        duplicated = frame.duplicated(["content_id", "ordinal"])
        if duplicated.any():
            row = frame[duplicated].iloc[0]
            day = dt.date.fromordinal(int(row["ordinal"]))
            raise DuplicateIdError(f"duplicate view log for content '{row['content_id']}' on {day.isoformat()}")

        self._entries: Dict[str, Tuple[np.ndarray, np.ndarray]] = {}
        for content_id, group in frame.groupby("content_id", sort=True):
            ordinals = group["ordinal"].to_numpy(dtype=np.int64)
            cumulative = np.concatenate([[0], np.cumsum(group["view_count"].to_numpy(dtype=np.int64))])
            self._entries[str(content_id)] = (ordinals, cumulative)
        self.n_logs = len(frame)

    def __contains__(self, content_id: str) -> bool:
        return content_id in self._entries

    def content_ids(self) -> List[str]:
        return list(self._entries)

    def total(self, content_id: str, start: Optional[dt.date] = None, end: Optional[dt.date] = None) -> int:
        """Sum of view counts on dates in [start, end)"""
        entry = self._entries.get(content_id)
        if entry is None:
            return 0
        ordinals, cumulative = entry
        lo = 0 if start is None else int(np.searchsorted(ordinals, start.toordinal(), side="left"))
        hi = len(ordinals) if end is None else int(np.searchsorted(ordinals, end.toordinal(), side="left"))
        if hi <= lo:
            return 0
        return int(cumulative[hi] - cumulative[lo])

    def has_logs_before(self, content_id: str, t: dt.date) -> bool:
        entry = self._entries.get(content_id)
        if entry is None:
            return False
        return bool(entry[0][0] < t.toordinal())

    def date_bounds(self) -> Optional[Tuple[dt.date, dt.date]]:
        """First and last logged date"""
        if not self._entries:
            return None
        first = min(ordinals[0] for ordinals, _ in self._entries.values())
        last = max(ordinals[-1] for ordinals, _ in self._entries.values())
        return dt.date.fromordinal(int(first)), dt.date.fromordinal(int(last))


LogSource = Union[ViewLogIndex, Sequence[ViewLog]]


class ContentCatalog:
    """Contents plus their view logs, indexed by series for prior-work queries"""

    def __init__(self, contents: Iterable[ContentRecord], view_logs: LogSource):
        self.contents = list(contents)
        self.logs = ViewLogIndex.of(view_logs)
        self.by_id: Dict[str, ContentRecord] = {c.content_id: c for c in self.contents}
        self._series: Dict[str, List[ContentRecord]] = defaultdict(list)
        for content in self.contents:
            if content.series_id:
                self._series[content.series_id].append(content)
        for members in self._series.values():
            members.sort(key=lambda c: (c.release_date, c.content_id))

    @classmethod
    def of(cls, catalog: Union["ContentCatalog", Sequence[ContentRecord]], view_logs: LogSource) -> "ContentCatalog":
        if isinstance(catalog, cls):
            return catalog
        return cls(catalog, view_logs)

    def prior_works(self, content: ContentRecord, t: dt.date) -> List[ContentRecord]:
        """Same-series contents released before t, excluding the content itself"""
        if not content.series_id:
            return []
        return [
            other
            for other in self._series.get(content.series_id, [])
            if other.release_date < t and other.content_id != content.content_id
        ]

    def classify(self, content: ContentRecord, t: dt.date) -> ContentType:
        for prior in self.prior_works(content, t):
            if self.logs.has_logs_before(prior.content_id, t):
                return ContentType.TYPE_A
        return ContentType.TYPE_B

    def related_view(self, content: ContentRecord, t: dt.date, window: int) -> int:
        """Views of prior same-series works on dates in [t - window, t)"""
        start = t - dt.timedelta(days=window)
        return sum(self.logs.total(prior.content_id, start, t) for prior in self.prior_works(content, t))


def hot_count(q: float, n: int) -> int:
    """ceil(q * n) without float round-off (0.2 * 15 must give 3)"""
    return math.ceil(Fraction(repr(q)) * n)


def label_hot_cold(
    view_logs: LogSource,
    contents: Sequence[ContentRecord],
    period: Period,
    q: float = DEFAULT_HOT_FRACTION,
    label_days: Optional[int] = None,
    cutoff: Optional[dt.date] = None,
) -> List[PopularityLabel]:
    """Label the contents released in `period`: top ceil(q*N) by views are hot.

    Each content is scored over the views of its first `label_days` days after
    release (the rest of the period when None). With a `cutoff`, only logs
    before it count and every content of the period shares the same horizon,
    the largest one fully observed for the latest release.
    Ties rank by content_id ascending.
    """
    if not 0 < q < 1:
        raise ValidationError(f"hot fraction q must lie in (0, 1), got {q}")

    index = ViewLogIndex.of(view_logs)
    candidates = [c for c in contents if period.contains(c.release_date)]
    if cutoff is not None:
        candidates = [c for c in candidates if c.release_date < cutoff]
    if not candidates:
        raise ValidationError(f"no contents released in period {period.start} .. {period.end}")

    horizon = label_days
    if cutoff is not None:
        observable = min((cutoff - c.release_date).days for c in candidates)
        horizon = observable if horizon is None else min(horizon, observable)

    totals = []
    for content in candidates:
        if horizon is None:
            end = period.end
        else:
            end = content.release_date + dt.timedelta(days=horizon)
        if cutoff is not None:
            end = min(end, cutoff)
        totals.append((index.total(content.content_id, content.release_date, end), content.content_id))

    totals.sort(key=lambda item: (-item[0], item[1]))
    n_hot = hot_count(q, len(totals))
    return [
        PopularityLabel(content_id=content_id, label=int(rank < n_hot), window_total_views=total)
        for rank, (total, content_id) in enumerate(totals)
    ]


def classify_type(
    content: ContentRecord,
    catalog: Union[ContentCatalog, Sequence[ContentRecord]],
    view_logs: LogSource,
    t: dt.date,
) -> ContentType:
    """Type A iff a prior same-series work released before t has a log before t"""
    return ContentCatalog.of(catalog, view_logs).classify(content, t)


def timeline_bounds(contents: Sequence[ContentRecord], view_logs: LogSource) -> Tuple[dt.date, dt.date]:
    """[first day, last day + 1) covered by releases and logs"""
    index = ViewLogIndex.of(view_logs)
    if not contents:
        raise ValidationError("empty content set")
    first = min(c.release_date for c in contents)
    last = max(c.release_date for c in contents)
    bounds = index.date_bounds()
    if bounds is not None:
        first = min(first, bounds[0])
        last = max(last, bounds[1])
    return first, last + dt.timedelta(days=1)


def build_period_grid(start: dt.date, end: dt.date, period_length: int) -> List[Period]:
    """Complete periods of `period_length` days tiling [start, end)"""
    n_periods = (end - start).days // period_length
    return [
        Period(start + dt.timedelta(days=i * period_length), start + dt.timedelta(days=(i + 1) * period_length))
        for i in range(n_periods)
    ]


def check_unique_ids(contents: Sequence[ContentRecord]) -> None:
    seen = set()
    for content in contents:
        if content.content_id in seen:
            raise DuplicateIdError(f"duplicate content_id '{content.content_id}'", field="content_id")
        seen.add(content.content_id)


def long_tail_summary(
    contents: Sequence[ContentRecord],
    view_logs: LogSource,
    q: float = DEFAULT_HOT_FRACTION,
) -> Tuple[Dict[str, float], pd.DataFrame]:
    """Share of all views held by the top-q contents, plus the rank/views table"""
    index = ViewLogIndex.of(view_logs)
    table = pd.DataFrame(
        {
            "content_id": [c.content_id for c in contents],
            "views": [index.total(c.content_id) for c in contents],
        }
    )
    table = table.sort_values(["views", "content_id"], ascending=[False, True], kind="mergesort").reset_index(drop=True)
    table["rank"] = np.arange(1, len(table) + 1)
    total = int(table["views"].sum())
    n_top = hot_count(q, len(table)) if len(table) else 0
    top_views = int(table["views"].iloc[:n_top].sum())
    summary = {
        "n_contents": float(len(table)),
        "total_views": float(total),
        "top_fraction": q,
        "top_share": top_views / total if total else 0.0,
    }
    return summary, table


def dataset_summary(
    contents: Sequence[ContentRecord],
    view_logs: LogSource,
    q: float = DEFAULT_HOT_FRACTION,
    period_length: int = 10,
    label_days: Optional[int] = 10,
) -> Dict[str, float]:
    """Type-A fraction (typed at each content's release) and hot base rate over complete periods"""
    catalog = ContentCatalog(contents, view_logs)
    n_type_a = sum(catalog.classify(c, c.release_date) == ContentType.TYPE_A for c in contents)

    start, end = timeline_bounds(contents, catalog.logs)
    n_labeled = n_hot = 0
    for period in build_period_grid(start, end, period_length):
        if not any(period.contains(c.release_date) for c in contents):
            continue
        labels = label_hot_cold(catalog.logs, contents, period, q, label_days)
        n_labeled += len(labels)
        n_hot += sum(label.label for label in labels)

    tail, _ = long_tail_summary(contents, catalog.logs, q)
    return {
        "n_contents": float(len(contents)),
        "n_view_logs": float(catalog.logs.n_logs),
        "type_a_fraction": n_type_a / len(contents) if contents else 0.0,
        "hot_base_rate": n_hot / n_labeled if n_labeled else 0.0,
        "top_share": tail["top_share"],
    }
