import numpy as np
import pytest

from components.dataset import ContentCatalog, ViewLog
from components.featurizer import (
    CATEGORICAL_FIELDS,
    FeatureVector,
    Featurizer,
    LeakageError,
    NumericScaler,
    build_vocab,
    encode,
    hash_tokens,
    related_view_feature,
    split_periods,
    tree_row,
)
from components.synthetic import generate_synthetic
from conftest import daily_logs, day, make_content
from utils.exceptions import ValidationError
from utils.helpers import WindowConfig


def test_levels_are_sorted_with_oov_at_zero():
    vocab = build_vocab([make_content("a", genre="romance"), make_content("b", genre="mystery")])
    genre = vocab.vocabularies[CATEGORICAL_FIELDS.index("genre")]

    assert genre.levels == ("mystery", "romance")
    assert (genre.index("mystery"), genre.index("romance")) == (1, 2)
    assert genre.index("horror") == 0
    assert genre.size == 3


def test_vocab_is_deterministic():
    contents = [make_content(f"c{i}", channel=f"ch{i % 3}") for i in range(10)]
    assert build_vocab(contents) == build_vocab(list(reversed(contents)))


def test_empty_training_set_has_no_vocab():
    with pytest.raises(ValidationError):
        build_vocab([])


def test_release_calendar_levels():
    vocab = build_vocab([make_content("a", release=0)])
    encoded = vocab.encode(make_content("b", release=0))
    # 2017-03-01 is a Wednesday in March
    assert vocab.vocabularies[5].levels == ("2",)
    assert vocab.vocabularies[6].levels == ("03",)
    assert encoded[5] == 1 and encoded[6] == 1


def series(n_prior=2):
    episodes = [make_content(f"ep{i}", release=i, series_id="s") for i in range(n_prior + 1)]
    return episodes


def test_related_view_single_prior_episode():
    episodes = series(1)
    logs = daily_logs("ep0", 0, [5, 5, 5])
    assert related_view_feature(episodes[1], episodes, logs, day(5), 10) == 15


def test_related_view_two_prior_episodes():
    episodes = series(2)
    logs = daily_logs("ep0", 0, [10]) + daily_logs("ep1", 1, [10])
    assert related_view_feature(episodes[2], episodes, logs, day(5), 10) == 20


def test_related_view_outside_window_is_zero():
    episodes = series(1)
    logs = daily_logs("ep0", 0, [9, 9])
    assert related_view_feature(episodes[1], episodes, logs, day(20), 5) == 0


def test_related_view_undefined_for_type_b():
    movie = make_content("m")
    with pytest.raises(ValidationError):
        related_view_feature(movie, [movie], [], day(5), 10)


def test_related_view_grows_with_window():
    rng = np.random.default_rng(0)
    episodes = series(3)
    logs = [log for i in range(3) for log in daily_logs(f"ep{i}", i, rng.integers(0, 20, 15).tolist())]
    values = [related_view_feature(episodes[3], episodes, logs, day(15), w) for w in range(1, 20)]
    assert values == sorted(values)


def test_mean_value_standardizes_to_zero():
    scaler = NumericScaler.fit(np.array([[100.0, 1.0, 0.0], [300.0, 3.0, 10.0]]))
    assert scaler.transform([200.0, 2.0, 5.0]) == (0.0, 0.0, 0.0)


def test_constant_column_uses_std_floor():
    scaler = NumericScaler.fit(np.array([[5.0, 1.0, 0.0], [5.0, 1.0, 0.0]]))
    assert np.all(np.isfinite(scaler.transform([6.0, 1.0, 0.0])))


def test_repeated_token_hashes_to_one_bucket():
    buckets = hash_tokens(["drama", "drama"])
    assert len(buckets) == 1
    assert buckets[0][1] == 2
    assert 0 <= buckets[0][0] < 16384


def test_empty_text_gives_valid_vector():
    content = make_content("a", actors=(), title="", keywords=())
    vocab = build_vocab([content])
    fv = encode(content, vocab, NumericScaler(), None)
    assert fv.text_indices == ()
    assert not fv.is_type_a
    assert fv.raw_numeric == (3600.0, 1.0, 0.0)


def test_text_is_lowercased_and_split():
    a = encode(make_content("a", title="Spring Days", actors=(), keywords=()), build_vocab([make_content("x")]), NumericScaler(), None)
    b = encode(make_content("b", title="spring  days", actors=(), keywords=()), build_vocab([make_content("x")]), NumericScaler(), None)
    assert a.text_indices == b.text_indices


def test_unseen_level_encodes_to_oov():
    vocab = build_vocab([make_content("a", channel="ch01")])
    fv = encode(make_content("b", channel="ch99"), vocab, NumericScaler(), None)
    assert fv.cat_indices[CATEGORICAL_FIELDS.index("channel")] == 0


def test_tree_row_one_hot_layout():
    fv = FeatureVector(cat_indices=(1, 0), numeric=(0.0,) * 3, raw_numeric=(10.0, 2.0, 7.0))
    assert tree_row(fv, (2, 3)).tolist() == [0, 1, 1, 0, 0, 10, 2, 7]
    with pytest.raises(ValidationError):
        tree_row(FeatureVector(cat_indices=(2, 0), numeric=(), raw_numeric=(0.0, 0.0, 0.0)), (2, 3))


def test_featurizer_refuses_post_release_time():
    content = make_content("a", release=3)
    featurizer = Featurizer(build_vocab([content]))
    with pytest.raises(LeakageError):
        featurizer.featurize(content, ContentCatalog([content], []), day(4), WindowConfig())


def test_ninety_days_of_ten_day_periods_give_eight_splits():
    contents, logs = generate_synthetic(300, 90, seed=5)
    splits = split_periods(contents, logs, period_length=10)

    assert len(splits) == 8
    assert splits[0].t == day(10)
    for split in splits:
        assert all(c.release_date < split.t for c in split.train_contents)
        assert all(split.period.contains(c.release_date) for c in split.test_contents)
        assert set(split.train_labels) <= {c.content_id for c in split.train_contents}


def test_short_timeline_is_rejected():
    contents = [make_content("a")]
    with pytest.raises(ValidationError):
        split_periods(contents, daily_logs("a", 0, [1] * 15), period_length=10)


def test_empty_test_period_is_kept_with_no_contents():
    contents = [make_content("a", release=0), make_content("b", release=25)]
    logs = daily_logs("a", 0, [1] * 30) + daily_logs("b", 25, [1] * 5)
    splits = split_periods(contents, logs, period_length=10)

    assert [len(s.test_contents) for s in splits] == [0, 1]


def test_poisoned_future_logs_leave_features_unchanged():
    contents, logs = generate_synthetic(300, 60, seed=11)
    split = split_periods(contents, logs, period_length=10)[3]
    test_ids = {c.content_id for c in split.test_contents}
    poison = [
        ViewLog(content_id=c.content_id, date=c.release_date, view_count=10 ** 9)
        for c in split.test_contents
    ]
    clean_logs = [log for log in logs if not (log.content_id in test_ids and log.date == contents_by_id(contents)[log.content_id].release_date)]

    featurizer = Featurizer(build_vocab(split.train_contents))
    windows = WindowConfig()
    clean = ContentCatalog(contents, clean_logs)
    poisoned = ContentCatalog(contents, clean_logs + poison)
    for content in split.test_contents:
        assert featurizer.featurize(content, clean, split.t, windows) == featurizer.featurize(content, poisoned, split.t, windows)


def contents_by_id(contents):
    return {c.content_id: c for c in contents}
