import math
import random

import pytest

from components.dataset import (
    ContentCatalog,
    ContentType,
    Period,
    ViewLogIndex,
    build_period_grid,
    classify_type,
    dataset_summary,
    hot_count,
    label_hot_cold,
    long_tail_summary,
)
from conftest import daily_logs, day, make_content
from utils.exceptions import DuplicateIdError, ValidationError

PERIOD = Period(day(0), day(10))


def test_top_two_of_ten_are_hot():
    contents = [make_content(f"c{i}", release=0) for i in range(10)]
    logs = [log for i in range(10) for log in daily_logs(f"c{i}", 0, [100 - 10 * i])]

    labels = label_hot_cold(logs, contents, PERIOD, q=0.2)

    assert [l.content_id for l in labels if l.label == 1] == ["c0", "c1"]
    assert sum(l.label for l in labels) == 2


def test_single_content_is_hot():
    labels = label_hot_cold(daily_logs("only", 0, [3]), [make_content("only")], PERIOD, q=0.2)
    assert [(l.content_id, l.label) for l in labels] == [("only", 1)]


def test_ties_break_by_content_id():
    ids = ["e", "b", "d", "a", "c"]
    contents = [make_content(cid) for cid in ids]
    logs = [log for cid in ids for log in daily_logs(cid, 0, [7])]

    labels = label_hot_cold(logs, contents, PERIOD, q=0.2)

    assert [l.content_id for l in labels if l.label] == ["a"]


def test_hot_count_is_exact_ceiling():
    assert hot_count(0.2, 15) == 3
    assert hot_count(0.2, 1) == 1
    for n in range(1, 1001):
        assert hot_count(0.2, n) == -(-n // 5)


def test_labeling_exactness_for_every_size():
    contents = [make_content(f"c{i:04d}", release=i % 10) for i in range(1000)]
    rng = random.Random(0)
    logs = [log for c in contents for log in daily_logs(c.content_id, c.release_date.day - 1, [rng.randint(0, 50)])]
    index = ViewLogIndex(logs)

    for n in range(1, 1001):
        labels = label_hot_cold(index, contents[:n], PERIOD, q=0.2)
        assert sum(l.label for l in labels) == math.ceil(n / 5)


def test_random_fractions_give_exact_hot_counts():
    rng = random.Random(1)
    for _ in range(50):
        n = rng.randint(1, 60)
        q = rng.uniform(0.01, 0.99)
        contents = [make_content(f"c{i}", release=rng.randint(0, 9)) for i in range(n)]
        logs = [log for c in contents for log in daily_logs(c.content_id, (c.release_date - day(0)).days, [rng.randint(0, 9)])]
        labels = label_hot_cold(logs, contents, PERIOD, q=q)
        assert sum(l.label for l in labels) == hot_count(q, n)


def test_labels_ignore_input_order():
    rng = random.Random(2)
    contents = [make_content(f"c{i}", release=rng.randint(0, 9)) for i in range(30)]
    logs = [log for c in contents for log in daily_logs(c.content_id, (c.release_date - day(0)).days, [rng.randint(0, 5)] * 3)]
    reference = label_hot_cold(logs, contents, PERIOD)

    for _ in range(5):
        shuffled = contents[:]
        rng.shuffle(shuffled)
        shuffled_logs = logs[:]
        rng.shuffle(shuffled_logs)
        assert label_hot_cold(shuffled_logs, shuffled, PERIOD) == reference


def test_label_days_limits_the_window():
    contents = [make_content("early"), make_content("late")]
    logs = daily_logs("early", 0, [1, 1, 50]) + daily_logs("late", 0, [5, 5, 0])

    labels = {l.content_id: l for l in label_hot_cold(logs, contents, PERIOD, q=0.5, label_days=2)}

    assert labels["late"].label == 1
    assert labels["early"].window_total_views == 2


def test_cutoff_uses_one_horizon_for_the_whole_period():
    contents = [make_content("a", release=0), make_content("b", release=4)]
    logs = daily_logs("a", 0, [1, 1, 1, 1, 100]) + daily_logs("b", 4, [3, 3])

    labels = {l.content_id: l for l in label_hot_cold(logs, contents, PERIOD, q=0.5, label_days=10, cutoff=day(6))}

    # horizon is 2 days (cutoff - latest release) for both
    assert labels["a"].window_total_views == 2
    assert labels["b"].window_total_views == 6
    assert labels["b"].label == 1


@pytest.mark.parametrize("q", [0.0, 1.0, -0.1, 1.5])
def test_fraction_outside_unit_interval_is_rejected(q):
    with pytest.raises(ValidationError):
        label_hot_cold([], [make_content("a")], PERIOD, q=q)


def test_empty_content_set_is_rejected():
    with pytest.raises(ValidationError):
        label_hot_cold([], [], PERIOD)


def test_duplicate_view_log_is_rejected():
    logs = daily_logs("a", 0, [1]) + daily_logs("a", 0, [2])
    with pytest.raises(DuplicateIdError):
        ViewLogIndex(logs)


def test_series_continuation_is_type_a():
    episodes = [make_content(f"ep{i}", release=i, series_id="s1") for i in range(1, 9)]
    logs = [log for ep in episodes[:7] for log in daily_logs(ep.content_id, int(ep.content_id[2:]), [10, 5])]

    assert classify_type(episodes[7], episodes, logs, day(8)) == ContentType.TYPE_A


def test_standalone_movie_is_type_b():
    movie = make_content("m1", program_type="movie")
    assert classify_type(movie, [movie], [], day(0)) == ContentType.TYPE_B


def test_series_without_prior_logs_is_type_b():
    first = make_content("ep1", release=0, series_id="s1")
    second = make_content("ep2", release=5, series_id="s1")
    # the only logs of the first episode are dated after t
    logs = daily_logs("ep1", 6, [10])

    assert classify_type(second, [first, second], logs, day(5)) == ContentType.TYPE_B


def test_prior_work_released_at_t_does_not_count():
    first = make_content("ep1", release=5, series_id="s1")
    second = make_content("ep2", release=5, series_id="s1")
    assert classify_type(second, [first, second], daily_logs("ep1", 5, [10]), day(5)) == ContentType.TYPE_B


def test_related_view_sums_prior_episodes_in_window():
    episodes = [make_content(f"ep{i}", release=i, series_id="s") for i in range(3)]
    logs = daily_logs("ep0", 0, [4, 4, 4, 4]) + daily_logs("ep1", 1, [6, 6, 6])
    catalog = ContentCatalog(episodes, logs)

    assert catalog.related_view(episodes[2], day(4), window=2) == 4 + 4 + 6 + 6
    assert catalog.related_view(episodes[2], day(4), window=10) == 16 + 18


def test_period_grid_keeps_complete_periods_only():
    grid = build_period_grid(day(0), day(95), 10)
    assert len(grid) == 9
    assert grid[-1] == Period(day(80), day(90))


def test_long_tail_summary_ranks_by_views():
    contents = [make_content(f"c{i}") for i in range(5)]
    logs = [log for i in range(5) for log in daily_logs(f"c{i}", 0, [10 ** (4 - i)])]

    summary, table = long_tail_summary(contents, logs, q=0.2)

    assert list(table["content_id"]) == ["c0", "c1", "c2", "c3", "c4"]
    assert list(table["rank"]) == [1, 2, 3, 4, 5]
    assert summary["top_share"] == pytest.approx(10000 / 11111)


def test_dataset_summary_reports_type_mix(small_dataset):
    contents, logs = small_dataset
    summary = dataset_summary(contents, logs)

    assert summary["n_contents"] == len(contents)
    assert 0.5 < summary["type_a_fraction"] < 0.9
    assert 0.2 <= summary["hot_base_rate"] < 0.3
