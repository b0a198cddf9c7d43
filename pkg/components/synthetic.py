"""Seeded long-tail catalog generator.

Popularity per content is a power-law (Lomax) scale times planted category,
actor and keyword effects; daily views decay exponentially after release with
multiplicative log-normal volatility. Episodes of a series share the series
scale, so views of earlier episodes predict the next one.
"""

import datetime as dt
import itertools
import logging
from typing import Dict, List, Sequence, Tuple

import numpy as np

from components.dataset import ContentRecord, ViewLog
from utils.exceptions import ValidationError

logger = logging.getLogger(__name__)

BASE_DATE = dt.date(2017, 3, 1)
MIN_CONTENTS = 10
MIN_DAYS = 30

PAYMENT_EFFECT = {"free": 1.4, "pay": 0.8}
PROGRAM_TYPE_EFFECT = {
    "animation": 1.1,
    "documentary": 0.5,
    "drama": 1.5,
    "kids": 0.7,
    "movie": 1.2,
    "variety": 0.9,
}
GENRE_EFFECT = {
    "action": 1.3,
    "comedy": 1.0,
    "documentary": 0.5,
    "family": 0.8,
    "fantasy": 1.1,
    "horror": 0.7,
    "mystery": 1.4,
    "romance": 1.6,
    "sf": 0.9,
    "thriller": 1.2,
}
AGE_EFFECT = {"all": 1.2, "12": 1.0, "15": 0.9, "19": 0.75}
N_CHANNELS = 40

SERIES_PROGRAM_TYPES = ("drama", "animation", "variety", "kids", "documentary")
SERIES_TYPE_WEIGHTS = (0.45, 0.2, 0.2, 0.1, 0.05)
STANDALONE_PROGRAM_TYPES = ("movie", "drama", "animation", "documentary", "variety")
STANDALONE_TYPE_WEIGHTS = (0.6, 0.15, 0.1, 0.1, 0.05)

SURNAMES = ("kim", "lee", "park", "choi", "jung", "kang", "cho", "yoon", "jang", "lim", "han", "oh", "seo", "shin", "kwon")
GIVEN_NAMES = (
    "minji", "seojun", "jiwoo", "hayun", "dohyun", "yuna", "siwoo", "jiho", "subin", "yerin",
    "junho", "chaewon", "hyunwoo", "sora", "taeyang", "dayeon", "minho", "eunbi", "jaehyun", "nari",
)
ACTORS = tuple(f"{surname} {given}" for surname, given in itertools.product(SURNAMES, GIVEN_NAMES))
N_STAR_ACTORS = 20
STAR_EFFECT = 1.8

TITLE_WORDS = (
    "love", "night", "city", "secret", "detective", "sky", "summer", "winter", "king", "queen",
    "doctor", "school", "garden", "river", "shadow", "moon", "star", "family", "road", "ocean",
    "fire", "island", "memory", "dream", "legend", "hero", "spring", "letter", "village", "code",
)
KEYWORDS = (
    "famous_actor", "remake", "webtoon", "award", "sequel", "idol", "blockbuster", "viral",
    "japan", "korea", "usa", "europe", "period", "office", "campus", "hospital", "crime", "revenge",
    "friendship", "travel", "cooking", "music", "sports", "history", "science", "nature", "war",
    "politics", "fashion", "animals", "space", "ghost", "robot", "wedding", "twins", "courtroom",
    "survival", "heist", "time_travel", "village", "romcom", "mystery_box", "healing", "makjang",
)
N_BUZZ_KEYWORDS = 8
BUZZ_EFFECT = 1.5

BASE_DAILY_VIEWS = 40.0
TAIL_EXPONENT = 1.2
DECAY_DAYS = (4.0, 10.0)
LOG_DAYS = 60


def _pick(rng: np.random.Generator, options: Sequence[str], weights: Sequence[float] = None) -> str:
    if weights is None:
        return options[int(rng.integers(len(options)))]
    return options[int(rng.choice(len(options), p=np.asarray(weights) / np.sum(weights)))]


def _sample(rng: np.random.Generator, options: Sequence[str], low: int, high: int) -> Tuple[str, ...]:
    size = int(rng.integers(low, high + 1))
    picks = rng.choice(len(options), size=size, replace=False)
    return tuple(options[i] for i in sorted(picks))


class _Draft:
    """Attributes of one content before ids are assigned"""

    def __init__(self, **fields):
        self.__dict__.update(fields)


class SyntheticCatalog:
    """Draws metadata and view logs for a seeded long-tail catalog"""

    def __init__(self, seed: int, volatility: float = 0.5, tail_exponent: float = TAIL_EXPONENT):
        self.rng = np.random.default_rng(seed)
        self.volatility = volatility
        self.tail_exponent = tail_exponent
        self.channels = tuple(f"ch{i:02d}" for i in range(N_CHANNELS))
        # fixed per seed: the many-level categorical signal
        self.channel_effect = dict(zip(self.channels, np.exp(self.rng.normal(0.0, 0.6, N_CHANNELS))))

    def effect(self, payment: str, program_type: str, genre: str, age_limit: str, channel: str,
               actors: Sequence[str], keywords: Sequence[str]) -> float:
        """Planted multiplicative popularity effect of the metadata"""
        multiplier = (
            PAYMENT_EFFECT[payment]
            * PROGRAM_TYPE_EFFECT[program_type]
            * GENRE_EFFECT[genre]
            * AGE_EFFECT[age_limit]
            * self.channel_effect[channel]
        )
        stars = sum(actor in ACTORS[:N_STAR_ACTORS] for actor in actors)
        buzz = sum(keyword in KEYWORDS[:N_BUZZ_KEYWORDS] for keyword in keywords)
        return float(multiplier * STAR_EFFECT ** min(stars, 2) * BUZZ_EFFECT ** min(buzz, 2))

    def popularity_scale(self) -> float:
        return float(BASE_DAILY_VIEWS * (self.rng.pareto(self.tail_exponent) + 1.0))

    def metadata(self, program_types: Sequence[str], weights: Sequence[float]) -> Dict:
        rng = self.rng
        program_type = _pick(rng, program_types, weights)
        genre = "documentary" if program_type == "documentary" else _pick(rng, sorted(set(GENRE_EFFECT) - {"documentary"}))
        return {
            "payment": _pick(rng, ("free", "pay"), (0.4, 0.6)),
            "program_type": program_type,
            "genre": genre,
            "age_limit": _pick(rng, ("all", "12", "15", "19"), (0.3, 0.3, 0.25, 0.15)),
            "channel": _pick(rng, self.channels),
            "actors": _sample(rng, ACTORS, 1, 4),
            "keywords": _sample(rng, KEYWORDS, 1, 4),
            "title_words": _sample(rng, TITLE_WORDS, 1, 3),
        }

    @staticmethod
    def playtime(program_type: str, rng: np.random.Generator) -> int:
        mean = {"movie": 6600, "documentary": 3000, "kids": 1200, "animation": 1440}.get(program_type, 3600)
        return int(max(300, rng.normal(mean, mean * 0.15)))

    def series_drafts(self, days: int, n_type_a: int) -> Tuple[List[_Draft], int]:
        """Multi-episode series holding exactly `n_type_a` non-premiere episodes"""
        rng = self.rng
        drafts: List[_Draft] = []
        remaining = n_type_a
        n_series = 0
        while remaining > 0:
            n_episodes = min(int(rng.integers(4, 13)), remaining + 1)
            remaining -= n_episodes - 1
            series_id = f"s{n_series:05d}"
            n_series += 1

            meta = self.metadata(SERIES_PROGRAM_TYPES, SERIES_TYPE_WEIGHTS)
            effect = self.effect(meta["payment"], meta["program_type"], meta["genre"], meta["age_limit"],
                                 meta["channel"], meta["actors"], meta["keywords"])
            series_scale = self.popularity_scale() * effect
            gap_max = max(1, min(7, (days - 1) // (n_episodes - 1)))
            gap = int(rng.integers(1, gap_max + 1))
            start = int(rng.integers(0, days - (n_episodes - 1) * gap))
            base_playtime = self.playtime(meta["program_type"], rng)

            for episode in range(1, n_episodes + 1):
                drafts.append(
                    _Draft(
                        series_id=series_id,
                        release_day=start + (episode - 1) * gap,
                        episode_count=episode,
                        playtime=int(max(300, base_playtime + rng.normal(0, 120))),
                        title=" ".join(meta["title_words"] + (f"ep{episode}",)),
                        scale=series_scale * float(np.exp(rng.normal(0.0, 0.25))) * 0.97 ** (episode - 1),
                        **{k: v for k, v in meta.items() if k != "title_words"},
                    )
                )
        return drafts, n_series

    def standalone_drafts(self, days: int, count: int) -> List[_Draft]:
        rng = self.rng
        drafts = []
        for _ in range(count):
            meta = self.metadata(STANDALONE_PROGRAM_TYPES, STANDALONE_TYPE_WEIGHTS)
            effect = self.effect(meta["payment"], meta["program_type"], meta["genre"], meta["age_limit"],
                                 meta["channel"], meta["actors"], meta["keywords"])
            drafts.append(
                _Draft(
                    series_id=None,
                    release_day=int(rng.integers(0, days)),
                    episode_count=1 if meta["program_type"] == "movie" else int(rng.integers(1, 25)),
                    playtime=self.playtime(meta["program_type"], rng),
                    title=" ".join(meta["title_words"]),
                    scale=self.popularity_scale() * effect,
                    **{k: v for k, v in meta.items() if k != "title_words"},
                )
            )
        return drafts

    def daily_views(self, scale: float, release_day: int, days: int) -> np.ndarray:
        n_days = min(days - release_day, LOG_DAYS)
        decay = self.rng.uniform(*DECAY_DAYS)
        ages = np.arange(n_days, dtype=float)
        noise = np.exp(self.rng.normal(0.0, self.volatility, n_days) - self.volatility ** 2 / 2)
        return self.rng.poisson(scale * np.exp(-ages / decay) * noise)


def generate_synthetic(
    n_contents: int,
    days: int,
    seed: int,
    type_a_fraction: float = 0.7,
    volatility: float = 0.5,
) -> Tuple[List[ContentRecord], List[ViewLog]]:
    """Generate a reproducible catalog and its daily view logs.

    `type_a_fraction` of the contents are non-premiere series episodes, i.e.
    type A when typed at their own release date.
    """
    if n_contents < MIN_CONTENTS:
        raise ValidationError(f"n_contents must be at least {MIN_CONTENTS}, got {n_contents}")
    if days < MIN_DAYS:
        raise ValidationError(f"days must be at least {MIN_DAYS}, got {days}")
    if not 0 <= type_a_fraction < 1:
        raise ValidationError(f"type_a_fraction must lie in [0, 1), got {type_a_fraction}")

    generator = SyntheticCatalog(seed, volatility=volatility)
    n_type_a = int(round(type_a_fraction * n_contents))
    drafts, n_series = generator.series_drafts(days, n_type_a)
    n_standalone = n_contents - len(drafts)
    if n_standalone < 0:
        raise ValidationError(f"type_a_fraction {type_a_fraction} leaves no room for series premieres")
    drafts.extend(generator.standalone_drafts(days, n_standalone))

    # ids follow release order; draw order breaks ties
    order = sorted(range(len(drafts)), key=lambda i: (drafts[i].release_day, i))
    contents: List[ContentRecord] = []
    view_logs: List[ViewLog] = []
    for number, i in enumerate(order):
        draft = drafts[i]
        content_id = f"c{number:06d}"
        release = BASE_DATE + dt.timedelta(days=draft.release_day)
        contents.append(
            ContentRecord(
                content_id=content_id,
                series_id=draft.series_id,
                payment=draft.payment,
                program_type=draft.program_type,
                genre=draft.genre,
                playtime=draft.playtime,
                episode_count=draft.episode_count,
                age_limit=draft.age_limit,
                channel=draft.channel,
                actors=draft.actors,
                title=draft.title,
                keywords=draft.keywords,
                release_date=release,
            )
        )
        for age, count in enumerate(generator.daily_views(draft.scale, draft.release_day, days)):
            view_logs.append(
                ViewLog.model_construct(
                    content_id=content_id, date=release + dt.timedelta(days=age), view_count=int(count)
                )
            )

    logger.info(
        "Generated %d contents (%d series, %d standalone) and %d view logs over %d days",
        len(contents), n_series, n_standalone, len(view_logs), days,
    )
    return contents, view_logs
