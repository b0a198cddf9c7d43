import datetime as dt

import pytest

from components.dataset import ContentRecord, ViewLog
from components.synthetic import generate_synthetic
from utils.helpers import GbdtConfig, NetConfig, RunConfig

START = dt.date(2017, 3, 1)


def day(n: int) -> dt.date:
    return START + dt.timedelta(days=n)


def make_content(content_id: str, release: int = 0, **overrides) -> ContentRecord:
    fields = dict(
        content_id=content_id,
        payment="free",
        program_type="drama",
        genre="romance",
        playtime=3600,
        episode_count=1,
        age_limit="15",
        channel="ch01",
        actors=("kim minji",),
        title="spring days",
        keywords=("love",),
        release_date=day(release),
    )
    fields.update(overrides)
    return ContentRecord(**fields)


def daily_logs(content_id: str, first_day: int, counts) -> list:
    return [ViewLog(content_id=content_id, date=day(first_day + i), view_count=c) for i, c in enumerate(counts)]


@pytest.fixture(scope="session")
def small_config() -> RunConfig:
    return RunConfig(
        net=NetConfig(embed_dim=4, text_dim=4, text_buckets=256, hidden=(16, 8), epochs=8, batch_size=32),
        gbdt=GbdtConfig(n_trees=30, max_depth=3),
    )


@pytest.fixture(scope="session")
def small_dataset():
    return generate_synthetic(400, 60, seed=3)


@pytest.fixture(scope="session")
def trained_model(small_dataset, small_config):
    from components.hybrid import train_hybrid

    contents, logs = small_dataset
    return train_hybrid(contents, logs, small_config, at=day(50))
