from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, Literal, Optional, Union

from pydantic import BaseModel, Field, model_validator

from utils import __version__
from utils.config import DEFAULT_MAX_UPLOAD_BYTES, ServiceConfig
from utils.detector import Detection, Detector
from utils.errors import DetectorFailure, EmptySet
from utils.imaging import PixelImage, PlaneTensor, decode_image
from utils.log import log
from utils.metrics import HierConfusion, MetricReport, binary_metrics, collapse_binary
from utils.quality_data import Decision, FeedbackCode, HierLabel, Tier


TIER3_STATUS = "not_implemented"

FEEDBACK_MESSAGES = {
    FeedbackCode.OK: "Image quality acceptable.",
    FeedbackCode.NO_EYE_DETECTED: "No open eye detected — please retake with the eye open and centered.",
    FeedbackCode.POOR_LIGHTING: "Image is poorly lit — please retake in even, adequate lighting.",
}


def feedback_message(code: FeedbackCode) -> str:
    return FEEDBACK_MESSAGES[code]


class Verdict(BaseModel):
    decision: Decision
    failed_tier: Optional[Tier] = None
    feedback_code: FeedbackCode
    tier_scores: dict[Tier, float] = Field(default_factory=dict)
    # Resolution, cornea completeness and focus checks have a slot but no detector yet
    tier3_status: Literal["not_implemented"] = TIER3_STATUS

    @model_validator(mode="after")
    def _check_consistency(self) -> "Verdict":
        accepted = self.decision is Decision.ACCEPT
        if accepted != (self.failed_tier is None) or accepted != (self.feedback_code is FeedbackCode.OK):
            raise ValueError("decision, failed_tier and feedback_code disagree")
        if Tier.LIGHTING in self.tier_scores and self.failed_tier is Tier.EYE_PRESENCE:
            raise ValueError("Lighting cannot be scored when eye presence failed")
        return self

    @property
    def hier_label(self) -> HierLabel:
        match self.failed_tier:
            case Tier.EYE_PRESENCE:
                return HierLabel.NO_EYE
            case Tier.LIGHTING:
                return HierLabel.EYE_BAD_LIGHT
        return HierLabel.EYE_GOOD_LIGHT

    def to_json_dict(self) -> dict:
        return {
            "decision": self.decision.value,
            "failed_tier": self.failed_tier.value if self.failed_tier else None,
            "feedback_code": self.feedback_code.value,
            "feedback": feedback_message(self.feedback_code),
            "tier_scores": {tier.value: score for tier, score in self.tier_scores.items()},
            "tier3": self.tier3_status,
        }


def _run_tier(tier: Tier, run: Callable[[], Detection]) -> Detection:
    # A failing detector is an error, never a silent retake
    try:
        return run()
    except DetectorFailure:
        raise
    except Exception as e:
        raise DetectorFailure(tier.value, e) from e


def _cascade(run_tier1: Callable[[], Detection], run_tier2: Callable[[], Detection]) -> Verdict:
    scores = {}
    eye = _run_tier(Tier.EYE_PRESENCE, run_tier1)
    scores[Tier.EYE_PRESENCE] = eye.score
    if not eye.label:
        return Verdict(
            decision=Decision.RETAKE,
            failed_tier=Tier.EYE_PRESENCE,
            feedback_code=FeedbackCode.NO_EYE_DETECTED,
            tier_scores=scores,
        )

    lighting = _run_tier(Tier.LIGHTING, run_tier2)
    scores[Tier.LIGHTING] = lighting.score
    if not lighting.label:
        return Verdict(
            decision=Decision.RETAKE,
            failed_tier=Tier.LIGHTING,
            feedback_code=FeedbackCode.POOR_LIGHTING,
            tier_scores=scores,
        )
    return Verdict(decision=Decision.ACCEPT, feedback_code=FeedbackCode.OK, tier_scores=scores)


def assess(t: PlaneTensor, tier1: Detector, tier2: Detector) -> Verdict:
    """Tier 1 gates Tier 2; Tier 2 never runs on an image without an eye."""
    return _cascade(lambda: tier1.detect(t), lambda: tier2.detect(t))


def assess_image(img: PixelImage, tier1: Detector, tier2: Detector) -> Verdict:
    """Like assess, but each tier preprocesses the image its own way."""
    return _cascade(lambda: tier1.detect(tier1.prepare(img)), lambda: tier2.detect(tier2.prepare(img)))


def classify3(t: PlaneTensor, tier1: Detector, tier2: Detector) -> HierLabel:
    return assess(t, tier1, tier2).hier_label


def _verdict_for(x: Union[PlaneTensor, PixelImage], tier1: Detector, tier2: Detector) -> Verdict:
    if isinstance(x, PixelImage):
        return assess_image(x, tier1, tier2)
    return assess(x, tier1, tier2)


def hierarchical_eval(
    samples: Iterable[tuple[Union[PlaneTensor, PixelImage], HierLabel]],
    tier1: Detector,
    tier2: Detector,
    workers: int = 1,
) -> tuple[HierConfusion, MetricReport]:
    def tally(sample) -> tuple[HierLabel, HierLabel]:
        x, truth = sample
        return truth, _verdict_for(x, tier1, tier2).hier_label

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            outcomes = list(executor.map(tally, samples))
    else:
        outcomes = (tally(sample) for sample in samples)

    confusion = HierConfusion()
    for truth, predicted in outcomes:
        confusion.record(truth, predicted)
    if confusion.total == 0:
        raise EmptySet("Hierarchical evaluation needs at least one sample")
    return confusion, binary_metrics(collapse_binary(confusion))


class QualityGate():
    """The two loaded tier detectors, shared read-only by every request."""

    def __init__(self, tier1: Detector, tier2: Detector, max_upload_bytes: int = DEFAULT_MAX_UPLOAD_BYTES) -> None:
        self.tier1 = tier1
        self.tier2 = tier2
        self.max_upload_bytes = max_upload_bytes


    @classmethod
    def from_config(cls, cfg: ServiceConfig) -> "QualityGate":
        tier1 = cfg.tier1.load()
        log.model_loaded_event(Tier.EYE_PRESENCE.value, tier1.backend, cfg.tier1.path, tier1.threshold)
        tier2 = cfg.tier2.load()
        log.model_loaded_event(Tier.LIGHTING.value, tier2.backend, cfg.tier2.path, tier2.threshold)
        return cls(tier1, tier2, cfg.max_upload_bytes)


    def assess_image(self, img: PixelImage) -> Verdict:
        return assess_image(img, self.tier1, self.tier2)


    def assess_bytes(self, data: bytes) -> Verdict:
        return self.assess_image(decode_image(data))


    def describe(self) -> dict:
        return {
            "version": __version__,
            "tiers": {
                Tier.EYE_PRESENCE.value: self.tier1.describe(),
                Tier.LIGHTING.value: self.tier2.describe(),
            },
            "tier3": TIER3_STATUS,
            "max_upload_bytes": self.max_upload_bytes,
        }
