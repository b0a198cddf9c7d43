import datetime as dt
import json
import logging
import os
from functools import wraps
from typing import List, Optional, Tuple

import typer
from rich.console import Console
from rich.table import Table

from components.data_loader import DatasetLoader, ingest, save_dataset
from components.dataset import ContentRecord, ContentType, ViewLog, dataset_summary, long_tail_summary
from components.evaluator import (
    DEFAULT_SWEEP,
    EvalReport,
    evaluate_model,
    loss_trace_frame,
    periods_frame,
    run_ablation_embedding,
    run_model_comparison,
    run_optimizer_comparison,
    run_window_sweep,
    write_csv,
    write_json,
    write_report,
)
from components.hybrid import load_model, new_content_catalog, predict_many, save_model, train_hybrid
from components.synthetic import generate_synthetic
from components.visualizer import Visualizer
from utils.exceptions import DataValidationError, HotColdError, ValidationError
from utils.helpers import SEED_ENV_VAR, ConfigManager, FileValidator, RunConfig, format_metric, setup_logging

app = typer.Typer(help="Pre-release hot/cold popularity prediction for streaming contents", add_completion=False)
console = Console()
logger = logging.getLogger(__name__)

EXPERIMENTS = ("ablation", "optimizers", "window-sweep", "models")
DATE_FORMATS = ["%Y-%m-%d"]

SeedOption = typer.Option(None, "--seed", envvar=SEED_ENV_VAR, help="Random seed (overrides the config file)")
ConfigOption = typer.Option(None, "--config", help="JSON run configuration")


@app.callback()
def main(verbose: bool = typer.Option(False, "--verbose", "-v", help="Debug logging")):
    setup_logging(verbose)


def handle_errors(command):
    """Turn errors into a message and exit code (1 validation or unreadable file, 2 runtime)"""

    @wraps(command)
    def wrapper(*args, **kwargs):
        try:
            return command(*args, **kwargs)
        except (typer.Exit, typer.Abort):
            raise
        except HotColdError as e:
            console.print(f"[bold red]Error:[/bold red] {e}")
            raise typer.Exit(code=e.exit_code)
        except OSError as e:
            logger.debug("I/O failure in %s", command.__name__, exc_info=True)
            console.print(f"[bold red]Error:[/bold red] {e}")
            raise typer.Exit(code=ValidationError.exit_code)
        except Exception as e:
            logger.debug("Unexpected failure in %s", command.__name__, exc_info=True)
            console.print(f"[bold red]Error:[/bold red] {type(e).__name__}: {e} (rerun with --verbose for details)")
            raise typer.Exit(code=HotColdError.exit_code)

    return wrapper


def load_dataset(directory: str) -> Tuple[List[ContentRecord], List[ViewLog]]:
    is_valid, fmt_or_message = FileValidator.validate_dataset_dir(directory)
    if not is_valid:
        raise DataValidationError(fmt_or_message)
    return ingest(directory, fmt_or_message)


def load_run_config(config_path: Optional[str], seed: Optional[int]) -> RunConfig:
    return ConfigManager.with_seed(ConfigManager.load_config(config_path), seed)


def as_date(value: Optional[dt.datetime]) -> Optional[dt.date]:
    return value.date() if value is not None else None


def metrics_table(title: str, reports: List[EvalReport]) -> Table:
    table = Table(title=title)
    for column in ("Model", "Precision", "Recall", "F1", "F1 (A)", "F1 (B)", "Periods", "Skipped"):
        table.add_column(column)
    for report in reports:
        macro = report.macro
        table.add_row(
            report.name,
            format_metric(macro.precision),
            format_metric(macro.recall),
            format_metric(macro.f1),
            format_metric(report.macro_for(ContentType.TYPE_A).f1),
            format_metric(report.macro_for(ContentType.TYPE_B).f1),
            str(len(report.periods)),
            str(len(report.skipped)),
        )
    return table


@app.command()
@handle_errors
def generate(
    out: str = typer.Option(..., "--out", help="Output dataset directory"),
    contents: int = typer.Option(1000, "--contents", help="Number of contents"),
    days: int = typer.Option(90, "--days", help="Timeline length in days"),
    seed: Optional[int] = typer.Option(7, "--seed", envvar=SEED_ENV_VAR),
    type_a_fraction: float = typer.Option(0.7, "--type-a-fraction"),
    volatility: float = typer.Option(0.5, "--volatility", help="Log-normal sd of daily view noise"),
    fmt: str = typer.Option("jsonl", "--format", help="jsonl or csv"),
    plots: bool = typer.Option(False, "--plots", help="Also write the long-tail chart"),
):
    """Write a seeded synthetic dataset (contents + view logs)"""
    if fmt not in ("jsonl", "csv"):
        raise ValidationError(f"unsupported format '{fmt}'. Allowed: jsonl, csv")
    items, logs = generate_synthetic(contents, days, seed, type_a_fraction, volatility)
    contents_path, views_path = save_dataset(out, items, logs, fmt)

    summary = dataset_summary(items, logs)
    tail, table = long_tail_summary(items, logs)
    console.print(f"Wrote {contents_path} and {views_path}")
    console.print(
        f"{len(items)} contents, {len(logs)} view logs | type-A fraction {summary['type_a_fraction']:.3f} | "
        f"hot base rate {summary['hot_base_rate']:.3f} | top 20% hold {tail['top_share']:.1%} of views"
    )
    if plots:
        path = Visualizer.save(Visualizer.create_long_tail_chart(table, tail["top_share"]), os.path.join(out, "long_tail.html"))
        console.print(f"Chart: {path}")


@app.command()
@handle_errors
def train(
    data: str = typer.Option(..., "--data", help="Dataset directory"),
    config: Optional[str] = ConfigOption,
    out: str = typer.Option("model.json", "--out", help="Model artifact path"),
    seed: Optional[int] = SeedOption,
    at: Optional[dt.datetime] = typer.Option(None, "--at", formats=DATE_FORMATS, help="Training cutoff (default: end of data)"),
):
    """Fit the hybrid model and write its JSON artifact"""
    run_config = load_run_config(config, seed)
    contents, logs = load_dataset(data)
    model = train_hybrid(contents, logs, run_config, at=as_date(at))
    save_model(model, out)

    console.print(f"Model written to {out} (cutoff {model.trained_at}, threshold {model.threshold:.3f})")
    if model.importance:
        table = Table(title="Top features (total split gain)")
        table.add_column("Feature")
        table.add_column("Gain", justify="right")
        for name, gain in list(model.importance.items())[:10]:
            table.add_row(name, f"{gain:.3f}")
        console.print(table)


@app.command()
@handle_errors
def predict(
    model: str = typer.Option(..., "--model", help="Model artifact"),
    new: str = typer.Option(..., "--new", help="Contents file of unreleased contents"),
    catalog: str = typer.Option(..., "--catalog", help="Dataset directory with released contents and view logs"),
    at: dt.datetime = typer.Option(..., "--at", formats=DATE_FORMATS, help="Prediction time"),
    out: str = typer.Option("predictions.jsonl", "--out"),
):
    """Score new contents; their own view logs are never read"""
    hybrid = load_model(model)
    new_contents = DatasetLoader.read_contents(new, "csv" if new.endswith(".csv") else "jsonl")
    known, logs = load_dataset(catalog)
    content_catalog = new_content_catalog(known, logs, new_contents)
    predictions = predict_many(hybrid, [(c, at.date()) for c in new_contents], content_catalog)

    directory = os.path.dirname(out)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(out, "w", encoding="utf-8", newline="\n") as f:
        for prediction in predictions:
            f.write(json.dumps(prediction.to_dict()) + "\n")
    n_hot = sum(p.is_hot for p in predictions)
    console.print(f"{len(predictions)} predictions ({n_hot} hot) written to {out}")


@app.command()
@handle_errors
def evaluate(
    data: str = typer.Option(..., "--data"),
    config: Optional[str] = ConfigOption,
    out: str = typer.Option("reports", "--out", help="Report directory"),
    seed: Optional[int] = SeedOption,
    mode: str = typer.Option("hybrid", "--mode", help="hybrid, gbdt or net"),
    plots: bool = typer.Option(False, "--plots"),
):
    """Rolling per-period evaluation with macro-averaged precision/recall/F1"""
    run_config = load_run_config(config, seed)
    contents, logs = load_dataset(data)
    report = evaluate_model(contents, logs, run_config, mode)

    write_report(report, os.path.join(out, "report.json"))
    write_csv(periods_frame(report), os.path.join(out, "periods.csv"))
    console.print(metrics_table("Rolling evaluation", [report]))
    for skipped in report.skipped:
        console.print(f"[yellow]skipped period {skipped.index} ({skipped.start}):[/yellow] {skipped.reason}")
    if plots:
        Visualizer.save(Visualizer.create_period_chart([report]), os.path.join(out, "periods.html"))


def parse_r_values(raw: str) -> List[int]:
    try:
        values = [int(token) for token in raw.split(",") if token.strip()]
    except ValueError as e:
        raise ValidationError(f"--r expects comma-separated integers, got '{raw}'") from e
    if not values:
        raise ValidationError("--r needs at least one value")
    return values


@app.command()
@handle_errors
def experiment(
    which: str = typer.Option(..., "--which", help="ablation, optimizers, window-sweep or models"),
    data: str = typer.Option(..., "--data"),
    config: Optional[str] = ConfigOption,
    out: str = typer.Option("experiments", "--out"),
    seed: Optional[int] = SeedOption,
    r: str = typer.Option(",".join(str(v) for v in DEFAULT_SWEEP), "--r", help="Observation windows for window-sweep"),
    plots: bool = typer.Option(False, "--plots", help="Also write HTML charts"),
):
    """Comparison experiments: embedding ablation, optimizers, window sweep, single-model ablations"""
    if which not in EXPERIMENTS:
        raise ValidationError(f"unknown experiment '{which}'. Allowed: {', '.join(EXPERIMENTS)}")
    run_config = load_run_config(config, seed)
    contents, logs = load_dataset(data)
    meta = {"seed": run_config.seed, "config_hash": ConfigManager.config_hash(run_config)}

    if which == "ablation":
        result = run_ablation_embedding(contents, logs, run_config)
        write_report(result.embedding, os.path.join(out, "ablation_embedding.json"))
        write_report(result.onehot, os.path.join(out, "ablation_onehot.json"))
        write_json({**meta, "type_b_f1": result.f1_pair}, os.path.join(out, "ablation.json"))
        console.print(metrics_table("Categorical embedding ablation", [result.embedding, result.onehot]))

    elif which == "optimizers":
        traces = run_optimizer_comparison(contents, logs, run_config)
        for name, trace in traces.items():
            write_csv(loss_trace_frame(trace), os.path.join(out, f"loss_{name}.csv"))
        table = Table(title="Training loss by optimizer")
        for column in ("Optimizer", "Epoch 0", "Final", "Epochs"):
            table.add_column(column)
        for name, trace in traces.items():
            table.add_row(name, f"{trace[0]:.4f}", f"{trace[-1]:.4f}", str(len(trace) - 1))
        console.print(table)
        if plots:
            Visualizer.save(Visualizer.create_loss_chart(traces), os.path.join(out, "loss.html"))

    elif which == "window-sweep":
        curve = run_window_sweep(contents, logs, parse_r_values(r), run_config)
        write_csv(curve, os.path.join(out, "window_sweep.csv"))
        console.print(curve.to_string(index=False))
        if plots:
            Visualizer.save(Visualizer.create_window_chart(curve), os.path.join(out, "window_sweep.html"))

    else:
        reports = run_model_comparison(contents, logs, run_config)
        for name, report in reports.items():
            write_report(report, os.path.join(out, f"models_{name}.json"))
        console.print(metrics_table("Hybrid vs single models", list(reports.values())))
        if plots:
            Visualizer.save(Visualizer.create_comparison_chart(list(reports.values())), os.path.join(out, "models.html"))
            Visualizer.save(Visualizer.create_period_chart(list(reports.values())), os.path.join(out, "models_periods.html"))

    console.print(f"Outputs written to {out}")


if __name__ == "__main__":
    app()
