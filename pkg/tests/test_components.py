from components.assess import tier_table, verdict_color
from components.evaluate import confusion_frame, metrics_frame
from utils.cascade import Verdict
from utils.metrics import BinaryConfusion, HierConfusion, binary_metrics
from utils.quality_data import Decision, FeedbackCode, Tier


def test_verdict_colors() -> None:
    accepted = Verdict(decision=Decision.ACCEPT, feedback_code=FeedbackCode.OK, tier_scores={Tier.EYE_PRESENCE: 0.9, Tier.LIGHTING: 0.8})
    no_eye = Verdict(decision=Decision.RETAKE, failed_tier=Tier.EYE_PRESENCE, feedback_code=FeedbackCode.NO_EYE_DETECTED)
    dark = Verdict(decision=Decision.RETAKE, failed_tier=Tier.LIGHTING, feedback_code=FeedbackCode.POOR_LIGHTING)

    assert [verdict_color(v) for v in (accepted, no_eye, dark)] == ["green", "red", "orange"]


def test_tier_table_marks_skipped_tiers() -> None:
    verdict = Verdict(
        decision=Decision.RETAKE,
        failed_tier=Tier.EYE_PRESENCE,
        feedback_code=FeedbackCode.NO_EYE_DETECTED,
        tier_scores={Tier.EYE_PRESENCE: 0.12345},
    )

    rows = tier_table(verdict)

    assert rows == [
        {"tier": "Eye presence", "score": 0.1235, "status": "failed"},
        {"tier": "Lighting", "score": None, "status": "skipped"},
    ]


def test_confusion_frame_shows_row_fractions() -> None:
    frame = confusion_frame(HierConfusion(counts=[[99, 0, 1], [1, 73, 26], [0, 0, 100]]))

    assert list(frame.columns) == ["no_eye", "eye_bad_light", "eye_good_light"]
    assert frame.loc["eye_bad_light", "eye_good_light"] == "26 (0.26)"
    assert frame.loc["eye_good_light", "eye_good_light"] == "100 (1.00)"


def test_metrics_frame() -> None:
    frame = metrics_frame(binary_metrics(BinaryConfusion(tp=100, fp=27, tn=173, fn=0)))

    assert frame.set_index("metric").loc["accuracy", "value"] == "91.000%"
