import pytest

from components.data_loader import save_dataset
from components.dataset import ContentCatalog, ContentType, ViewLogIndex
from components.synthetic import generate_synthetic
from utils.exceptions import ValidationError


@pytest.fixture(scope="module")
def catalog_1000():
    return generate_synthetic(1000, 90, seed=7, type_a_fraction=0.7)


def test_same_seed_gives_identical_files(tmp_path, catalog_1000):
    again = generate_synthetic(1000, 90, seed=7, type_a_fraction=0.7)
    save_dataset(str(tmp_path / "first"), *catalog_1000)
    save_dataset(str(tmp_path / "second"), *again)

    for name in ("contents.jsonl", "views.jsonl"):
        assert (tmp_path / "first" / name).read_bytes() == (tmp_path / "second" / name).read_bytes()


def test_different_seeds_differ():
    a, _ = generate_synthetic(50, 30, seed=1)
    b, _ = generate_synthetic(50, 30, seed=2)
    assert a != b


def test_views_follow_a_long_tail(catalog_1000):
    contents, logs = catalog_1000
    index = ViewLogIndex(logs)
    totals = sorted((index.total(c.content_id) for c in contents), reverse=True)

    assert sum(totals[:200]) > 0.5 * sum(totals)


def test_type_a_fraction_matches_target(catalog_1000):
    contents, logs = catalog_1000
    catalog = ContentCatalog(contents, logs)
    n_type_a = sum(catalog.classify(c, c.release_date) == ContentType.TYPE_A for c in contents)

    assert n_type_a / len(contents) == pytest.approx(0.70, abs=0.02)


def test_episodes_of_a_series_share_popularity(catalog_1000):
    contents, logs = catalog_1000
    index = ViewLogIndex(logs)
    series = {}
    for c in contents:
        if c.series_id:
            series.setdefault(c.series_id, []).append(index.total(c.content_id))
    means = sorted(sum(v) / len(v) for v in series.values() if len(v) >= 3)

    # between-series spread dwarfs a factor of 4
    assert means[-1] > 4 * means[len(means) // 2]


def test_records_are_valid_and_ordered(catalog_1000):
    contents, logs = catalog_1000
    assert len(contents) == 1000
    assert [c.content_id for c in contents] == sorted(c.content_id for c in contents)
    assert all(c.release_date <= d.release_date for c, d in zip(contents, contents[1:]))
    assert all(log.view_count >= 0 for log in logs)


@pytest.mark.parametrize("n_contents,days", [(5, 90), (100, 10)])
def test_invalid_sizes_are_rejected(n_contents, days):
    with pytest.raises(ValidationError):
        generate_synthetic(n_contents, days, seed=0)
