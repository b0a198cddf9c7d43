import json

import pandas as pd
import pytest
from typer.testing import CliRunner

from app import app
from components.data_loader import DatasetLoader, ingest, save_dataset
from components.synthetic import generate_synthetic
from conftest import daily_logs, day, make_content
from utils.helpers import SEED_ENV_VAR

runner = CliRunner()

SMALL_CONFIG = {
    "net": {"embed_dim": 4, "text_dim": 4, "text_buckets": 256, "hidden": [16, 8], "epochs": 6, "batch_size": 32},
    "gbdt": {"n_trees": 20, "max_depth": 3},
}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    result = runner.invoke(app, ["generate", "--out", str(root / "data"), "--contents", "400", "--days", "60", "--seed", "3"])
    assert result.exit_code == 0, result.output
    config = root / "config.json"
    config.write_text(json.dumps(SMALL_CONFIG))
    return root


def generate_bytes(tmp_path, name, args, env=None):
    out = tmp_path / name
    result = runner.invoke(app, ["generate", "--out", str(out), "--contents", "50", "--days", "30", *args], env=env)
    assert result.exit_code == 0, result.output
    return (out / "contents.jsonl").read_bytes() + (out / "views.jsonl").read_bytes()


def test_generated_dataset_reads_back(workspace):
    contents, logs = ingest(str(workspace / "data"))
    assert len(contents) == 400
    assert logs
    assert all(log.view_count >= 0 for log in logs)


def test_generate_is_deterministic(tmp_path):
    assert generate_bytes(tmp_path, "a", ["--seed", "5"]) == generate_bytes(tmp_path, "b", ["--seed", "5"])
    assert generate_bytes(tmp_path, "c", ["--seed", "5"]) != generate_bytes(tmp_path, "d", ["--seed", "6"])


def test_seed_environment_variable_and_flag_precedence(tmp_path):
    from_env = generate_bytes(tmp_path, "env", [], env={SEED_ENV_VAR: "11"})
    assert from_env == generate_bytes(tmp_path, "flag", ["--seed", "11"])
    assert generate_bytes(tmp_path, "both", ["--seed", "12"], env={SEED_ENV_VAR: "11"}) == generate_bytes(
        tmp_path, "twelve", ["--seed", "12"]
    )


def test_too_few_contents_is_a_validation_error(tmp_path):
    result = runner.invoke(app, ["generate", "--out", str(tmp_path / "x"), "--contents", "5"])
    assert result.exit_code == 1
    assert "at least 10" in result.output


def test_csv_format_is_written(tmp_path):
    result = runner.invoke(app, ["generate", "--out", str(tmp_path / "csv"), "--contents", "20", "--days", "30", "--format", "csv"])
    assert result.exit_code == 0, result.output
    assert (tmp_path / "csv" / "contents.csv").exists()


def test_unknown_config_key_exits_with_validation_code(workspace, tmp_path):
    config = tmp_path / "bad.json"
    config.write_text(json.dumps({"learning_speed": 3}))
    result = runner.invoke(app, ["train", "--data", str(workspace / "data"), "--config", str(config), "--out", str(tmp_path / "m.json")])
    assert result.exit_code == 1
    assert "learning_speed" in result.output


def test_missing_dataset_directory_exits_with_validation_code(tmp_path):
    result = runner.invoke(app, ["train", "--data", str(tmp_path / "absent")])
    assert result.exit_code == 1


def test_train_then_predict(workspace, tmp_path):
    model_path = tmp_path / "model.json"
    result = runner.invoke(
        app,
        ["train", "--data", str(workspace / "data"), "--config", str(workspace / "config.json"),
         "--out", str(model_path), "--at", "2017-04-20"],
    )
    assert result.exit_code == 0, result.output
    assert json.loads(model_path.read_text())["format_version"] == 1

    contents, _ = ingest(str(workspace / "data"))
    new = [c for c in contents if c.release_date.isoformat() >= "2017-04-20"]
    new_path = tmp_path / "new.jsonl"
    DatasetLoader.write_contents(str(new_path), new)

    predictions_path = tmp_path / "predictions.jsonl"
    result = runner.invoke(
        app,
        ["predict", "--model", str(model_path), "--new", str(new_path), "--catalog", str(workspace / "data"),
         "--at", "2017-04-20", "--out", str(predictions_path)],
    )
    assert result.exit_code == 0, result.output

    rows = [json.loads(line) for line in predictions_path.read_text().splitlines()]
    assert [row["content_id"] for row in rows] == [c.content_id for c in new]
    for row in rows:
        assert set(row) == {"content_id", "probability", "label", "route"}
        assert 0 < row["probability"] < 1
        assert row["label"] in ("hot", "cold")
        assert row["route"] in ("A", "B")


def test_predict_with_missing_model_is_a_runtime_error(workspace, tmp_path):
    result = runner.invoke(
        app,
        ["predict", "--model", str(tmp_path / "none.json"), "--new", str(workspace / "data" / "contents.jsonl"),
         "--catalog", str(workspace / "data"), "--at", "2017-04-20"],
    )
    assert result.exit_code == 2


def test_evaluate_writes_report(workspace, tmp_path):
    out = tmp_path / "reports"
    result = runner.invoke(
        app, ["evaluate", "--data", str(workspace / "data"), "--config", str(workspace / "config.json"), "--out", str(out)]
    )
    assert result.exit_code == 0, result.output

    report = json.loads((out / "report.json").read_text())
    assert report["periods"]
    assert set(report["macro"]) == {"precision", "recall", "f1"}
    assert len(pd.read_csv(out / "periods.csv")) == len(report["periods"])


def test_optimizer_experiment_writes_one_trace_per_optimizer(workspace, tmp_path):
    out = tmp_path / "experiments"
    result = runner.invoke(
        app,
        ["experiment", "--which", "optimizers", "--data", str(workspace / "data"),
         "--config", str(workspace / "config.json"), "--out", str(out)],
    )
    assert result.exit_code == 0, result.output

    for name in ("ftrl", "adam", "rmsprop", "fobos"):
        trace = pd.read_csv(out / f"loss_{name}.csv")
        assert list(trace.columns) == ["epoch", "loss"]
        assert len(trace) == SMALL_CONFIG["net"]["epochs"] + 1


def test_window_sweep_experiment(workspace, tmp_path):
    out = tmp_path / "sweep"
    result = runner.invoke(
        app,
        ["experiment", "--which", "window-sweep", "--r", "0,10", "--data", str(workspace / "data"),
         "--config", str(workspace / "config.json"), "--out", str(out)],
    )
    assert result.exit_code == 0, result.output

    curve = pd.read_csv(out / "window_sweep.csv")
    assert list(curve["r"]) == [0, 10]
    assert curve.loc[0, "f1"] == 0.0


def test_unknown_experiment_is_rejected(workspace):
    result = runner.invoke(app, ["experiment", "--which", "everything", "--data", str(workspace / "data")])
    assert result.exit_code == 1


@pytest.fixture(scope="module")
def series_predictions(tmp_path_factory):
    """Predictions for a sequel of a heavily watched series and a show from a channel never seen in training"""
    root = tmp_path_factory.mktemp("series")
    contents, logs = generate_synthetic(1500, 90, seed=8)
    pilot = make_content("smash-hit-ep1", release=40, series_id="smash-hit", episode_count=1)
    save_dataset(str(root / "catalog"), contents + [pilot], list(logs) + daily_logs(pilot.content_id, 40, [10 ** 6] * 20))

    config = root / "config.json"
    config.write_text(json.dumps({"net": SMALL_CONFIG["net"]}))
    at = day(60).isoformat()
    result = runner.invoke(
        app,
        ["train", "--data", str(root / "catalog"), "--config", str(config), "--out", str(root / "model.json"), "--at", at],
    )
    assert result.exit_code == 0, result.output

    new = [
        make_content("smash-hit-ep2", release=60, series_id="smash-hit", episode_count=2),
        make_content("fresh-channel-show", release=61, series_id=None, program_type="movie", channel="ch_unseen"),
    ]
    DatasetLoader.write_contents(str(root / "new.jsonl"), new)
    out = root / "predictions.jsonl"
    result = runner.invoke(
        app,
        ["predict", "--model", str(root / "model.json"), "--new", str(root / "new.jsonl"),
         "--catalog", str(root / "catalog"), "--at", at, "--out", str(out)],
    )
    assert result.exit_code == 0, result.output
    return {row["content_id"]: row for row in map(json.loads, out.read_text().splitlines())}


def test_predict_labels_the_sequel_of_a_hit_series_hot(series_predictions):
    row = series_predictions["smash-hit-ep2"]
    assert row["route"] == "A"
    assert row["probability"] > 0.5
    assert row["label"] == "hot"


def test_predict_scores_an_unseen_channel_through_the_net(series_predictions):
    row = series_predictions["fresh-channel-show"]
    assert row["route"] == "B"
    assert 0 < row["probability"] < 1
    assert row["label"] in ("hot", "cold")


def test_unexpected_failure_exits_with_runtime_code(monkeypatch, tmp_path):
    def broken(*args, **kwargs):
        raise RuntimeError("generator exploded")

    monkeypatch.setattr("app.generate_synthetic", broken)
    result = runner.invoke(app, ["generate", "--out", str(tmp_path / "x"), "--contents", "20"])

    assert result.exit_code == 2
    assert "generator exploded" in result.output
    assert isinstance(result.exception, SystemExit)
