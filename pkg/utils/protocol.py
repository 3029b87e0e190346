import math
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator
from tqdm import tqdm

from utils.detector import FEATURE_LENGTH, LogisticModel, batch_loss_and_grad, extract_features, predict_scores
from utils.errors import DivergedLoss, DuplicateSampleId, EmptyClass, EmptySet, GridCellError, IrisGateError
from utils.imaging import PlaneTensor
from utils.log import log
from utils.metrics import AggregateReport, BinaryConfusion, MetricReport, aggregate, binary_metrics


DEFAULT_RATIOS = (8, 1, 1)


class HyperParams(BaseModel):
    lr: float = Field(gt=0.0)
    momentum: float = Field(ge=0.0, lt=1.0)


class LabeledSample(BaseModel):
    """One tier-labelled image, carried as its feature vector."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    id: str
    source: Optional[str] = None
    label: bool
    features: np.ndarray

    @field_validator("features", mode="before")
    @classmethod
    def _vector(cls, value):
        return np.array(value, dtype=np.float64)

    @classmethod
    def from_tensor(cls, id: str, tensor: PlaneTensor, label: bool, source: Optional[str] = None) -> "LabeledSample":
        return cls(id=id, source=source, label=label, features=extract_features(tensor))


class SplitResult(BaseModel):
    train: list[LabeledSample]
    validation: list[LabeledSample]
    test: list[LabeledSample]
    seed: int


class EpochRecord(BaseModel):
    epoch: int
    train_loss: float
    val_loss: float


class TrainingTrace(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    records: list[EpochRecord]
    checkpoints: list[list[float]]
    chosen_epoch: int = 0
    # Trained model (standardization included) holding the last epoch's weights
    model: LogisticModel

    def restore(self, epoch: Optional[int] = None) -> LogisticModel:
        epoch = epoch or self.chosen_epoch
        return self.model.with_weights(np.array(self.checkpoints[epoch - 1]))

    def to_json_dict(self) -> dict:
        return {
            "chosen_epoch": self.chosen_epoch,
            "epochs": [record.model_dump() for record in self.records],
        }


class GridCell(BaseModel):
    hp: HyperParams
    custom: Optional[float]
    chosen_epoch: int


class RunResult(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    run: int
    seed: int
    hp: HyperParams
    confusion: BinaryConfusion
    report: MetricReport
    trace: TrainingTrace
    grid: list[GridCell] = Field(default_factory=list)


class LossCurveSummary(BaseModel):
    epochs: list[dict[str, float]]
    best_epoch: int


def _check_unique(samples: list[LabeledSample]) -> None:
    seen = set()
    for sample in samples:
        if sample.id in seen:
            raise DuplicateSampleId(f"Sample id {sample.id} appears twice")
        seen.add(sample.id)


def allocate(count: int, ratios: tuple[int, ...]) -> list[int]:
    """Floor of each share, remainder to the largest fractional parts (ties in subset order)."""
    total = sum(ratios)
    floors = [count * ratio // total for ratio in ratios]
    fractions = [count * ratio % total for ratio in ratios]
    leftover = count - sum(floors)
    order = sorted(range(len(ratios)), key=lambda i: (-fractions[i], i))
    for i in order[:leftover]:
        floors[i] += 1
    return floors


def stratified_split(samples: list[LabeledSample], ratios: tuple[int, int, int] = DEFAULT_RATIOS, seed: int = 0) -> SplitResult:
    if len(ratios) != 3 or any(int(ratio) != ratio or ratio <= 0 for ratio in ratios):
        raise ValueError("ratios must be three positive integers")
    if seed < 0:
        raise ValueError("seed must be non-negative")
    _check_unique(samples)

    subsets = [[], [], []]
    for class_index, label in enumerate((False, True)):
        members = [sample for sample in samples if sample.label == label]
        if not members:
            raise EmptyClass(f"No samples labelled {label}")
        order = np.random.default_rng([seed, class_index]).permutation(len(members))
        start = 0
        for subset, size in zip(subsets, allocate(len(members), tuple(ratios))):
            subset.extend(members[i] for i in order[start:start + size])
            start += size

    log.split_event(seed, *(len(subset) for subset in subsets))
    return SplitResult(train=subsets[0], validation=subsets[1], test=subsets[2], seed=seed)


def sgd_momentum_step(weights: np.ndarray, velocity: np.ndarray, grad: np.ndarray, hp: HyperParams) -> tuple[np.ndarray, np.ndarray]:
    """v <- m*v + g; w <- w - lr*v (no dampening, not Nesterov)."""
    velocity = hp.momentum * velocity + grad
    return weights - hp.lr * velocity, velocity


def _matrix(samples: list[LabeledSample]) -> tuple[np.ndarray, np.ndarray]:
    return np.stack([sample.features for sample in samples]), np.array([sample.label for sample in samples])


def _fit_standardization(model: LogisticModel, features: np.ndarray) -> None:
    shift = features.mean(axis=0)
    scale = features.std(axis=0)
    # Constant columns (the bias among them) pass through untouched
    constant = scale < 1e-12
    shift[constant] = 0.0
    scale[constant] = 1.0
    model.feature_shift = shift
    model.feature_scale = scale


def train(
    model: LogisticModel,
    train_set: list[LabeledSample],
    val_set: list[LabeledSample],
    hp: HyperParams,
    epochs: int = 20,
    batch_size: int = 32,
    seed: int = 0,
    standardize: bool = True,
    quiet: bool = True,
) -> TrainingTrace:
    if not train_set or not val_set:
        raise EmptySet("Training and validation sets must be non-empty")
    if epochs < 1 or batch_size < 1:
        raise ValueError("epochs and batch_size must be at least 1")

    features, labels = _matrix(train_set)
    val_features, val_labels = _matrix(val_set)
    model = model.clone()
    if standardize:
        _fit_standardization(model, features)

    weights, velocity = model.weights.copy(), model.velocity.copy()
    records, checkpoints = [], []
    for epoch in tqdm(range(1, epochs + 1), desc="epochs", disable=quiet, leave=False):
        order = np.random.default_rng([seed, epoch]).permutation(len(train_set))
        epoch_losses = []
        for start in range(0, len(order), batch_size):
            batch = order[start:start + batch_size]
            model.weights = weights
            losses, grad = batch_loss_and_grad(model, features[batch], labels[batch])
            weights, velocity = sgd_momentum_step(weights, velocity, grad, hp)
            epoch_losses.append(losses)

        model.weights = weights
        val_losses, _ = batch_loss_and_grad(model, val_features, val_labels)
        train_loss = float(np.concatenate(epoch_losses).mean())
        val_loss = float(val_losses.mean())
        if not (math.isfinite(train_loss) and math.isfinite(val_loss) and np.all(np.isfinite(weights))):
            raise DivergedLoss(epoch)

        records.append(EpochRecord(epoch=epoch, train_loss=train_loss, val_loss=val_loss))
        checkpoints.append(weights.tolist())
        log.epoch_event(epoch, train_loss, val_loss)

    model.velocity = velocity
    trace = TrainingTrace(records=records, checkpoints=checkpoints, model=model)
    trace.chosen_epoch = select_checkpoint(trace)
    return trace


def select_checkpoint(trace: TrainingTrace) -> int:
    """Earliest epoch with the minimum validation loss (1-based)."""
    if not trace.records:
        raise EmptySet("Empty training trace")
    return int(np.argmin([record.val_loss for record in trace.records])) + 1


def evaluate(model: LogisticModel, samples: list[LabeledSample]) -> tuple[BinaryConfusion, MetricReport]:
    if not samples:
        raise EmptySet("Cannot evaluate on an empty set")
    features, labels = _matrix(samples)
    predictions = predict_scores(model, features) >= model.threshold
    confusion = BinaryConfusion.from_predictions(labels, predictions)
    return confusion, binary_metrics(confusion)


def _default_factory() -> LogisticModel:
    return LogisticModel.zeros(FEATURE_LENGTH)


def _ordered_map(fn: Callable, items: list, workers: int) -> list:
    # Results keep input order, so parallel runs fold deterministically
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            return list(executor.map(fn, items))
    return [fn(item) for item in items]


def _search_split(
    grid: list[HyperParams],
    split: SplitResult,
    epochs: int,
    batch_size: int,
    model_factory: Callable[[], LogisticModel],
    standardize: bool,
    workers: int,
) -> tuple[HyperParams, list[GridCell], TrainingTrace]:
    """Train every cell on one split; returns the winner, the table and the winner's trace."""
    if not grid:
        raise ValueError("Hyperparameter grid is empty")

    def run_cell(hp: HyperParams) -> tuple[GridCell, TrainingTrace]:
        try:
            trace = train(model_factory(), split.train, split.validation, hp, epochs, batch_size, split.seed, standardize)
        except IrisGateError as e:
            raise GridCellError(hp.lr, hp.momentum, e) from e
        _, report = evaluate(trace.restore(), split.validation)
        log.grid_event(hp.lr, hp.momentum, report.custom, trace.chosen_epoch)
        return GridCell(hp=hp, custom=report.custom, chosen_epoch=trace.chosen_epoch), trace

    results = _ordered_map(run_cell, list(grid), workers)
    table = [cell for cell, _ in results]
    # Highest validation Custom wins; ties go to the lower lr, then the lower momentum
    best = min(
        range(len(table)),
        key=lambda i: (-(table[i].custom if table[i].custom is not None else -math.inf), table[i].hp.lr, table[i].hp.momentum),
    )
    return table[best].hp, table, results[best][1]


def grid_search(
    grid: list[HyperParams],
    samples: list[LabeledSample],
    ratios: tuple[int, int, int] = DEFAULT_RATIOS,
    seed: int = 0,
    epochs: int = 20,
    batch_size: int = 32,
    model_factory: Callable[[], LogisticModel] = _default_factory,
    standardize: bool = True,
    workers: int = 1,
) -> tuple[HyperParams, list[GridCell]]:
    """Pick the pair maximizing the validation Custom score of the min-validation-loss checkpoint."""
    split = stratified_split(samples, ratios, seed)
    best, table, _ = _search_split(grid, split, epochs, batch_size, model_factory, standardize, workers)
    return best, table


def repeated_runs(
    samples: list[LabeledSample],
    k: int = 5,
    hp: Optional[HyperParams] = None,
    epochs: int = 20,
    base_seed: int = 0,
    ratios: tuple[int, int, int] = DEFAULT_RATIOS,
    batch_size: int = 32,
    model_factory: Callable[[], LogisticModel] = _default_factory,
    standardize: bool = True,
    grid: Optional[list[HyperParams]] = None,
    workers: int = 1,
) -> list[RunResult]:
    """k stratified splits seeded base_seed + i; a grid re-searches hyperparameters on every split."""
    if k < 1:
        raise ValueError("k must be at least 1")
    if hp is None and not grid:
        raise ValueError("Either fixed hyperparameters or a grid is required")

    def run(index: int) -> RunResult:
        seed = base_seed + index
        split = stratified_split(samples, ratios, seed)
        if grid:
            # The winning cell already trained on this split with this seed
            run_hp, table, trace = _search_split(grid, split, epochs, batch_size, model_factory, standardize, 1)
        else:
            run_hp, table = hp, []
            trace = train(model_factory(), split.train, split.validation, run_hp, epochs, batch_size, seed, standardize)
        confusion, report = evaluate(trace.restore(), split.test)
        log.run_event(index, seed, trace.chosen_epoch, report.accuracy)
        return RunResult(run=index, seed=seed, hp=run_hp, confusion=confusion, report=report, trace=trace, grid=table)

    return _ordered_map(run, list(range(1, k + 1)), workers)


def repeated_experiment(
    samples: list[LabeledSample],
    k: int = 5,
    hp: Optional[HyperParams] = None,
    epochs: int = 20,
    base_seed: int = 0,
    **kwargs,
) -> AggregateReport:
    runs = repeated_runs(samples, k, hp, epochs, base_seed, **kwargs)
    return aggregate([run.report for run in runs])


def loss_curve_summary(traces: list[TrainingTrace]) -> LossCurveSummary:
    """Per-epoch mean and sample std of train/validation losses across runs."""
    if not traces:
        raise EmptySet("No traces to summarize")
    lengths = {len(trace.records) for trace in traces}
    if len(lengths) != 1:
        raise ValueError("Traces must cover the same number of epochs")

    train_losses = np.array([[record.train_loss for record in trace.records] for trace in traces])
    val_losses = np.array([[record.val_loss for record in trace.records] for trace in traces])
    ddof = 1 if len(traces) > 1 else 0
    epochs = []
    for index in range(train_losses.shape[1]):
        epochs.append({
            "epoch": index + 1,
            "train_mean": float(train_losses[:, index].mean()),
            "train_std": float(train_losses[:, index].std(ddof=ddof)),
            "val_mean": float(val_losses[:, index].mean()),
            "val_std": float(val_losses[:, index].std(ddof=ddof)),
        })
    best_epoch = int(np.argmin(val_losses.mean(axis=0))) + 1
    return LossCurveSummary(epochs=epochs, best_epoch=best_epoch)


class ExperimentReport(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    grid: list[GridCell]
    chosen: HyperParams
    runs: list[RunResult]
    aggregate: AggregateReport
    loss_curve: LossCurveSummary

    def best_model(self) -> LogisticModel:
        """The first repetition's model at its chosen checkpoint."""
        return self.runs[0].trace.restore()

    def to_json_dict(self, config_echo: Optional[dict] = None) -> dict:
        return {
            "config": config_echo or {},
            "grid": [cell.model_dump() for cell in self.grid],
            "chosen_hyperparameters": self.chosen.model_dump(),
            "runs": [
                {
                    "run": run.run,
                    "seed": run.seed,
                    "hyperparameters": run.hp.model_dump(),
                    "chosen_epoch": run.trace.chosen_epoch,
                    "confusion": run.confusion.model_dump(),
                    "metrics": run.report.to_json_dict(),
                    "trace": run.trace.to_json_dict(),
                    "grid": [cell.model_dump() for cell in run.grid],
                }
                for run in self.runs
            ],
            "aggregate": self.aggregate.to_json_dict(),
            "loss_curve": self.loss_curve.model_dump(),
        }


def run_experiment(
    samples: list[LabeledSample],
    grid: list[HyperParams],
    k: int = 5,
    base_seed: int = 0,
    ratios: tuple[int, int, int] = DEFAULT_RATIOS,
    epochs: int = 20,
    batch_size: int = 32,
    search_once: bool = True,
    model_factory: Callable[[], LogisticModel] = _default_factory,
    standardize: bool = True,
    workers: int = 1,
) -> ExperimentReport:
    """Grid search (once on repetition 1's split, or per repetition) then k test runs."""
    common = dict(ratios=ratios, batch_size=batch_size, model_factory=model_factory, standardize=standardize, workers=workers)
    if search_once:
        chosen, table = grid_search(grid, samples, seed=base_seed + 1, epochs=epochs, **common)
        runs = repeated_runs(samples, k, chosen, epochs, base_seed, **common)
    else:
        runs = repeated_runs(samples, k, None, epochs, base_seed, grid=grid, **common)
        table = runs[0].grid
        chosen = runs[0].hp
    return ExperimentReport(
        grid=table,
        chosen=chosen,
        runs=runs,
        aggregate=aggregate([run.report for run in runs]),
        loss_curve=loss_curve_summary([run.trace for run in runs]),
    )
