import json
import logging
import os
from typing import Any, Dict, Iterator, List, Sequence, Tuple, Type

import pandas as pd
from pydantic import BaseModel
from pydantic import ValidationError as PydanticValidationError

from components.dataset import ContentRecord, ViewLog, check_unique_ids
from utils.exceptions import DataValidationError, DuplicateIdError
from utils.helpers import SUPPORTED_FORMATS, FileValidator

logger = logging.getLogger(__name__)


class DatasetLoader:
    """Read and write contents / view logs as JSONL or CSV"""

    LIST_FIELDS = ("actors", "keywords")
    LIST_DELIMITER = "|"
    # an empty cell is an empty title, not a missing one
    TEXT_FIELDS = ("title",)

    @staticmethod
    def rows_from_jsonl(path: str) -> Iterator[Tuple[int, Dict[str, Any]]]:
        """Yield (line number, object) pairs, skipping blank lines"""
        with open(path, "r", encoding="utf-8") as f:
            for line_no, line in enumerate(f, start=1):
                if not line.strip():
                    continue
                try:
                    row = json.loads(line)
                except json.JSONDecodeError as e:
                    raise DataValidationError(f"malformed JSON ({e.msg})", line=line_no) from e
                if not isinstance(row, dict):
                    raise DataValidationError("expected a JSON object", line=line_no)
                yield line_no, row

    @classmethod
    def rows_from_csv(cls, path: str) -> Iterator[Tuple[int, Dict[str, Any]]]:
        """Yield (line number, row) pairs; line 1 is the header"""
        frame = pd.read_csv(path, dtype=str, keep_default_na=False)
        for offset, record in enumerate(frame.to_dict("records")):
            row: Dict[str, Any] = {}
            for key, value in record.items():
                if key in cls.LIST_FIELDS:
                    row[key] = [token for token in value.split(cls.LIST_DELIMITER) if token] if value else []
                elif value != "" or key in cls.TEXT_FIELDS:
                    row[key] = value
            yield offset + 2, row

    @classmethod
    def iter_rows(cls, path: str, fmt: str) -> Iterator[Tuple[int, Dict[str, Any]]]:
        if fmt == "jsonl":
            return cls.rows_from_jsonl(path)
        elif fmt == "csv":
            return cls.rows_from_csv(path)
        raise DataValidationError(f"unsupported format '{fmt}'. Allowed: {', '.join(SUPPORTED_FORMATS)}")

    @staticmethod
    def validate_row(model: Type[BaseModel], row: Dict[str, Any], line_no: int) -> BaseModel:
        try:
            return model.model_validate(row)
        except PydanticValidationError as e:
            first = e.errors()[0]
            field = ".".join(str(part) for part in first["loc"]) or None
            raise DataValidationError(first["msg"], line=line_no, field=field) from e

    @classmethod
    def read_contents(cls, path: str, fmt: str = "jsonl") -> List[ContentRecord]:
        contents = []
        seen: Dict[str, int] = {}
        for line_no, row in cls.iter_rows(path, fmt):
            content = cls.validate_row(ContentRecord, row, line_no)
            if content.content_id in seen:
                raise DuplicateIdError(
                    f"duplicate content_id '{content.content_id}' (first seen on line {seen[content.content_id]})",
                    line=line_no,
                    field="content_id",
                )
            seen[content.content_id] = line_no
            contents.append(content)
        logger.debug("Read %d contents from %s", len(contents), path)
        return contents

    @classmethod
    def read_view_logs(cls, path: str, fmt: str = "jsonl") -> List[ViewLog]:
        logs = []
        seen = set()
        for line_no, row in cls.iter_rows(path, fmt):
            log = cls.validate_row(ViewLog, row, line_no)
            key = (log.content_id, log.date)
            if key in seen:
                raise DuplicateIdError(
                    f"duplicate view log for '{log.content_id}' on {log.date.isoformat()}", line=line_no, field="date"
                )
            seen.add(key)
            logs.append(log)
        logger.debug("Read %d view logs from %s", len(logs), path)
        return logs

    @classmethod
    def content_row(cls, content: ContentRecord, fmt: str) -> Dict[str, Any]:
        row = content.model_dump(mode="json", exclude_none=True)
        if fmt == "csv":
            for key in cls.LIST_FIELDS:
                row[key] = cls.LIST_DELIMITER.join(row.get(key, []))
        return row

    @classmethod
    def write_contents(cls, path: str, contents: Sequence[ContentRecord], fmt: str = "jsonl") -> None:
        rows = [cls.content_row(c, fmt) for c in contents]
        if fmt == "jsonl":
            with open(path, "w", encoding="utf-8", newline="\n") as f:
                for row in rows:
                    f.write(json.dumps(row) + "\n")
        else:
            columns = list(ContentRecord.model_fields)
            pd.DataFrame(rows, columns=columns).to_csv(path, index=False, lineterminator="\n")

    @staticmethod
    def write_view_logs(path: str, view_logs: Sequence[ViewLog], fmt: str = "jsonl") -> None:
        if fmt == "jsonl":
            with open(path, "w", encoding="utf-8", newline="\n") as f:
                for log in view_logs:
                    row = {"content_id": log.content_id, "date": log.date.isoformat(), "view_count": log.view_count}
                    f.write(json.dumps(row) + "\n")
        else:
            frame = pd.DataFrame(
                {
                    "content_id": [log.content_id for log in view_logs],
                    "date": [log.date.isoformat() for log in view_logs],
                    "view_count": [log.view_count for log in view_logs],
                }
            )
            frame.to_csv(path, index=False, lineterminator="\n")


def ingest(path: str, fmt: str = "jsonl") -> Tuple[List[ContentRecord], List[ViewLog]]:
    """Load a dataset directory (contents + views) or a single contents file"""
    if os.path.isdir(path):
        contents_path, views_path = FileValidator.dataset_paths(path, fmt)
        if not os.path.exists(contents_path):
            raise DataValidationError(f"missing contents file {contents_path}")
        contents = DatasetLoader.read_contents(contents_path, fmt)
        view_logs = DatasetLoader.read_view_logs(views_path, fmt) if os.path.exists(views_path) else []
    elif os.path.exists(path):
        contents = DatasetLoader.read_contents(path, fmt)
        view_logs = []
    else:
        raise DataValidationError(f"file not found: {path}")

    check_unique_ids(contents)
    logger.info("Ingested %d contents and %d view logs from %s", len(contents), len(view_logs), path)
    return contents, view_logs


def save_dataset(
    directory: str, contents: Sequence[ContentRecord], view_logs: Sequence[ViewLog], fmt: str = "jsonl"
) -> Tuple[str, str]:
    os.makedirs(directory, exist_ok=True)
    contents_path, views_path = FileValidator.dataset_paths(directory, fmt)
    DatasetLoader.write_contents(contents_path, contents, fmt)
    DatasetLoader.write_view_logs(views_path, view_logs, fmt)
    return contents_path, views_path
