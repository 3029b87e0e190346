import logging
import os
from typing import Any

from rich.console import Console
from rich.logging import RichHandler


class Log():
    """Event logger for the gate, one method per event kind."""

    def __init__(self, name: str = "iris_gate") -> None:
        self.logger = logging.getLogger(name)
        if not self.logger.handlers:
            handler = RichHandler(console=Console(stderr=True), rich_tracebacks=True, show_path=False, markup=False)
            handler.setFormatter(logging.Formatter("%(message)s"))
            self.logger.addHandler(handler)
        level = os.getenv("IRIS_GATE_LOG_LEVEL", "INFO").upper()
        self.logger.setLevel(getattr(logging, level, logging.INFO))


    def _event(self, event: str, level: int = logging.INFO, **fields: Any) -> None:
        context = " ".join(f"{key}={value}" for key, value in fields.items())
        self.logger.log(level, "%s %s", event, context)


    def verdict_event(self, decision: str, feedback_code: str, elapsed_ms: float, request_id: str = "-") -> None:
        self._event("verdict", request_id=request_id, decision=decision, feedback_code=feedback_code, elapsed_ms=f"{elapsed_ms:.1f}")


    def request_error_event(self, status: int, error: str, request_id: str = "-") -> None:
        self._event("request_error", logging.WARNING, request_id=request_id, status=status, error=error)


    def model_loaded_event(self, tier: str, backend: str, path: Any, threshold: float) -> None:
        self._event("model_loaded", tier=tier, backend=backend, path=path, threshold=threshold)


    def split_event(self, seed: int, train: int, validation: int, test: int) -> None:
        self._event("split", logging.DEBUG, seed=seed, train=train, validation=validation, test=test)


    def epoch_event(self, epoch: int, train_loss: float, val_loss: float) -> None:
        self._event("epoch", logging.DEBUG, epoch=epoch, train_loss=f"{train_loss:.6f}", val_loss=f"{val_loss:.6f}")


    def grid_event(self, lr: float, momentum: float, custom: Any, chosen_epoch: int) -> None:
        self._event("grid_cell", lr=lr, momentum=momentum, custom=custom, chosen_epoch=chosen_epoch)


    def run_event(self, run: int, seed: int, chosen_epoch: int, accuracy: Any) -> None:
        self._event("run", run=run, seed=seed, chosen_epoch=chosen_epoch, accuracy=accuracy)


    def dataset_event(self, out_dir: Any, samples: int, tier1: int, tier2: int) -> None:
        self._event("dataset_written", out_dir=out_dir, samples=samples, tier1=tier1, tier2=tier2)


    def warning(self, message: str, **fields: Any) -> None:
        self._event(message, logging.WARNING, **fields)


log = Log()
