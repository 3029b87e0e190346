import json
import sys
from functools import wraps
from pathlib import Path
from typing import Optional

import click
from dotenv import load_dotenv
from rich.console import Console
from rich.table import Table

from utils.cascade import QualityGate, hierarchical_eval
from utils.config import load_config, service_config
from utils.detector import Detector, LogisticModel, backend_for_path, load_detector
from utils.errors import IrisGateError
from utils.imaging import load_image
from utils.manifest import iter_hier_samples, load_samples, read_manifest, tier_rows
from utils.metrics import BinaryConfusion, binary_metrics, collapse_binary, format_aggregate, format_report
from utils.protocol import run_experiment
from utils.quality_data import HIER_ORDER, Tier
from utils.service import serve as serve_http
from utils.synthgen import gen_dataset


console = Console(stderr=True)


def handle_errors(command):
    """Print gate errors as a one-line message and exit 1."""
    @wraps(command)
    def wrapper(*args, **kwargs):
        try:
            return command(*args, **kwargs)
        except IrisGateError as e:
            console.print(f"[bold red]{type(e).__name__}[/bold red]: {e.message}")
            sys.exit(1)
    return wrapper


def emit(payload: dict) -> None:
    click.echo(json.dumps(payload, indent=2))


def metrics_table(title: str, rows: dict[str, str]) -> Table:
    table = Table(title=title)
    table.add_column("metric")
    table.add_column("value", justify="right")
    for name, value in rows.items():
        table.add_row(name, value)
    return table


def open_detector(path: str) -> Detector:
    return load_detector(backend_for_path(path), None if path == "heuristic" else path)


@click.group()
def cli():
    """Eye image quality gate: data generation, training, evaluation and serving."""
    load_dotenv()


@cli.command()
@click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None, help="TOML config; falls back to IRIS_GATE_CONFIG.")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True)
@handle_errors
def synth(config_path: Optional[str], out_dir: str):
    """Generate a labelled synthetic eye dataset."""
    app = load_config(config_path)
    manifest = gen_dataset(app.synth, out_dir)
    emit(manifest.model_dump(mode="json"))


@cli.command()
@click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None)
@click.option("--tier", type=click.IntRange(1, 2), required=True)
@click.option("--manifest", "manifest_path", type=click.Path(dir_okay=False), default=None, help="Defaults to [experiment.dataset].manifest.")
@click.option("--out", "model_out", type=click.Path(dir_okay=False), required=True)
@handle_errors
def train(config_path: Optional[str], tier: int, manifest_path: Optional[str], model_out: str):
    """Grid search, k repeated runs, and save the selected model."""
    app = load_config(config_path)
    experiment = app.experiment
    manifest_path = manifest_path or experiment.dataset.manifest
    if not manifest_path:
        raise click.UsageError("No manifest given and the config names none")

    preprocess_config = experiment.preprocess.build()
    samples = load_samples(manifest_path, Tier.from_number(tier), preprocess_config, quiet=False)
    threshold = experiment.detector.threshold
    training = experiment.training
    report = run_experiment(
        samples,
        grid=training.grid,
        k=experiment.dataset.k_runs,
        base_seed=experiment.dataset.seed,
        ratios=experiment.dataset.ratios,
        epochs=training.epochs,
        batch_size=training.batch_size,
        search_once=training.search_once,
        model_factory=lambda: LogisticModel.zeros(threshold=threshold, preprocess_config=preprocess_config),
        standardize=training.standardize,
        workers=training.workers,
    )
    report.best_model().save(model_out)

    console.print(metrics_table(f"Tier {tier} over {experiment.dataset.k_runs} runs", format_aggregate(report.aggregate)))
    echo = {
        "tier": tier,
        "manifest": str(manifest_path),
        "preprocess_mode": preprocess_config.mode,
        **experiment.model_dump(mode="json"),
    }
    emit(report.to_json_dict(config_echo=echo))


@cli.command(name="eval")
@click.option("--tier", type=click.IntRange(1, 2), required=True)
@click.option("--model", "model_path", required=True, help="Model file (.json logistic, .onnx) or 'heuristic'.")
@click.option("--manifest", "manifest_path", type=click.Path(dir_okay=False), required=True)
@handle_errors
def evaluate(tier: int, model_path: str, manifest_path: str):
    """Score one tier detector on a manifest."""
    detector = open_detector(model_path)
    truths, predictions = [], []
    for _, image_path, label in tier_rows(read_manifest(manifest_path), Tier.from_number(tier)):
        truths.append(label)
        predictions.append(detector.detect(detector.prepare(load_image(image_path))).label)
    confusion = BinaryConfusion.from_predictions(truths, predictions)
    report = binary_metrics(confusion)

    console.print(metrics_table(f"Tier {tier}", format_report(report)))
    emit({"confusion": confusion.model_dump(), "metrics": report.to_json_dict()})


@cli.command(name="cascade-eval")
@click.option("--tier1", "tier1_path", required=True)
@click.option("--tier2", "tier2_path", required=True)
@click.option("--manifest", "manifest_path", type=click.Path(dir_okay=False), required=True)
@handle_errors
def cascade_eval(tier1_path: str, tier2_path: str, manifest_path: str):
    """Run the full cascade over a hierarchically labelled manifest."""
    confusion, report = hierarchical_eval(iter_hier_samples(manifest_path), open_detector(tier1_path), open_detector(tier2_path))

    table = Table(title="Ground truth (rows) vs predicted (columns)")
    table.add_column("")
    for label in HIER_ORDER:
        table.add_column(label.value, justify="right")
    for label, counts, fractions in zip(HIER_ORDER, confusion.counts, confusion.row_fractions()):
        table.add_row(label.value, *(f"{n} ({f:.2f})" if f is not None else str(n) for n, f in zip(counts, fractions)))
    console.print(table)
    console.print(metrics_table("Collapsed binary", format_report(report)))
    emit({"hier_confusion": confusion.to_json_dict(), "binary_confusion": collapse_binary(confusion).model_dump(), "metrics": report.to_json_dict()})


@cli.command()
@click.option("--tier1", "tier1_path", required=True)
@click.option("--tier2", "tier2_path", required=True)
@click.argument("image", type=click.Path(dir_okay=False))
@handle_errors
def assess(tier1_path: str, tier2_path: str, image: str):
    """Assess one image file and print its verdict."""
    gate = QualityGate(open_detector(tier1_path), open_detector(tier2_path))
    verdict = gate.assess_image(load_image(image))
    emit({"image": str(Path(image)), **verdict.to_json_dict()})


@cli.command()
@click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None)
@handle_errors
def serve(config_path: Optional[str]):
    """Load both tier models and start the HTTP service."""
    serve_http(service_config(load_config(config_path)))


if __name__ == "__main__":
    cli()
