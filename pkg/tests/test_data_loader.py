import json

import pytest

from components.data_loader import DatasetLoader, ingest, save_dataset
from conftest import daily_logs, make_content
from utils.exceptions import DataValidationError, DuplicateIdError


def content_row(content_id: str, **overrides) -> dict:
    row = make_content(content_id).model_dump(mode="json")
    row.pop("related_view")
    row.update(overrides)
    return row


def write_jsonl(path, rows):
    path.write_text("".join(json.dumps(row) + "\n" for row in rows))
    return str(path)


def test_reads_well_formed_jsonl(tmp_path):
    path = write_jsonl(tmp_path / "contents.jsonl", [content_row(f"c{i}") for i in range(3)])

    contents, logs = ingest(path)

    assert [c.content_id for c in contents] == ["c0", "c1", "c2"]
    assert logs == []


def test_negative_playtime_names_line_and_field(tmp_path):
    path = write_jsonl(tmp_path / "contents.jsonl", [content_row("c0"), content_row("c1", playtime=-5)])

    with pytest.raises(DataValidationError) as info:
        ingest(path)

    assert info.value.line == 2
    assert info.value.field == "playtime"
    assert "line 2" in str(info.value)


def test_content_without_title_names_the_field(tmp_path):
    row = content_row("c0")
    del row["title"]
    path = write_jsonl(tmp_path / "contents.jsonl", [row])

    with pytest.raises(DataValidationError) as info:
        ingest(path)

    assert info.value.line == 1
    assert info.value.field == "title"


def test_duplicate_content_id_is_rejected(tmp_path):
    path = write_jsonl(tmp_path / "contents.jsonl", [content_row("c0"), content_row("c0")])
    with pytest.raises(DuplicateIdError):
        ingest(path)


def test_malformed_json_reports_line(tmp_path):
    path = tmp_path / "contents.jsonl"
    path.write_text(json.dumps(content_row("c0")) + "\n{not json\n")

    with pytest.raises(DataValidationError, match="line 2"):
        DatasetLoader.read_contents(str(path))


def test_unknown_field_is_rejected(tmp_path):
    path = write_jsonl(tmp_path / "contents.jsonl", [content_row("c0", rating=5)])
    with pytest.raises(DataValidationError):
        ingest(path)


def test_unseen_category_level_is_not_an_error(tmp_path):
    path = write_jsonl(tmp_path / "contents.jsonl", [content_row("c0", channel="brand-new-channel")])
    contents, _ = ingest(path)
    assert contents[0].channel == "brand-new-channel"


def test_numeric_age_limit_is_read_as_level(tmp_path):
    path = write_jsonl(tmp_path / "contents.jsonl", [content_row("c0", age_limit=19)])
    contents, _ = ingest(path)
    assert contents[0].age_limit == "19"


def test_duplicate_view_log_is_rejected(tmp_path):
    rows = [{"content_id": "c0", "date": "2017-03-01", "view_count": 1}] * 2
    path = write_jsonl(tmp_path / "views.jsonl", rows)
    with pytest.raises(DuplicateIdError):
        DatasetLoader.read_view_logs(path)


@pytest.mark.parametrize("fmt", ["jsonl", "csv"])
def test_dataset_directory_round_trip(tmp_path, fmt):
    contents = [
        make_content("c0", series_id="s1", actors=("kim minji", "lee jiho"), keywords=()),
        make_content("c1", release=3, title="", keywords=("rival", "office")),
    ]
    logs = daily_logs("c0", 0, [5, 3]) + daily_logs("c1", 3, [7])

    save_dataset(str(tmp_path), contents, logs, fmt)
    loaded_contents, loaded_logs = ingest(str(tmp_path), fmt)

    assert loaded_contents == contents
    assert loaded_logs == logs


def test_missing_file_is_reported(tmp_path):
    with pytest.raises(DataValidationError, match="not found"):
        ingest(str(tmp_path / "absent.jsonl"))
