from typing import Optional

from utils.detector import Detection, Detector
from utils.imaging import PlaneTensor, PreprocessConfig


class StubDetector(Detector):
    """Returns fixed scores, one per call in turn, or one score for every call."""

    backend = "stub"

    def __init__(self, scores, threshold: float = 0.5, fail: Optional[Exception] = None) -> None:
        super().__init__(threshold, PreprocessConfig.for_mode("raw"))
        self.scores = list(scores) if isinstance(scores, (list, tuple)) else None
        self.constant = None if self.scores is not None else float(scores)
        self.fail = fail
        self.calls = 0

    def detect(self, t: PlaneTensor) -> Detection:
        self.calls += 1
        if self.fail is not None:
            raise self.fail
        score = self.constant if self.scores is None else self.scores[self.calls - 1]
        return Detection.from_score(score, self.threshold)
