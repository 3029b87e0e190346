from enum import Enum


class HierLabel(Enum):
    NO_EYE = "no_eye"                  # P-bar
    EYE_BAD_LIGHT = "eye_bad_light"    # PL-bar
    EYE_GOOD_LIGHT = "eye_good_light"  # PL

    @property
    def index(self) -> int:
        return HIER_ORDER.index(self)

    @property
    def eye_present(self) -> bool:
        return self is not HierLabel.NO_EYE


# Row/column order of the hierarchical confusion matrix
HIER_ORDER = [HierLabel.NO_EYE, HierLabel.EYE_BAD_LIGHT, HierLabel.EYE_GOOD_LIGHT]


class Tier(Enum):
    EYE_PRESENCE = "eye_presence"
    LIGHTING = "lighting"

    @classmethod
    def from_number(cls, number: int) -> "Tier":
        match number:
            case 1:
                return cls.EYE_PRESENCE
            case 2:
                return cls.LIGHTING
        raise ValueError(f"No tier numbered {number}")


class Decision(Enum):
    ACCEPT = "accept"
    RETAKE = "retake"


class FeedbackCode(Enum):
    OK = "OK"
    NO_EYE_DETECTED = "NO_EYE_DETECTED"
    POOR_LIGHTING = "POOR_LIGHTING"


def tier_label(hier_label: HierLabel, tier: Tier) -> bool | None:
    """Binary label of a hierarchically labelled sample for one tier.

    Returns None when the sample does not belong to the tier's dataset
    (lighting is only judged on images with an eye present).
    """
    if tier is Tier.EYE_PRESENCE:
        return hier_label.eye_present
    if not hier_label.eye_present:
        return None
    return hier_label is HierLabel.EYE_GOOD_LIGHT
