import time

import streamlit as st

from utils.cascade import QualityGate, Verdict, feedback_message
from utils.errors import DetectorFailure, MalformedImage, TooLarge, UnsupportedFormat
from utils.log import log
from utils.quality_data import Decision, Tier


TIER_LABELS = {
    Tier.EYE_PRESENCE: "Eye presence",
    Tier.LIGHTING: "Lighting",
}


def verdict_color(verdict: Verdict) -> str:
    if verdict.decision is Decision.ACCEPT:
        return "green"
    if verdict.failed_tier is Tier.EYE_PRESENCE:
        return "red"
    return "orange"


def tier_table(verdict: Verdict) -> list[dict]:
    """One row per cascade tier; tiers that never ran are marked as skipped."""
    rows = []
    for tier in Tier:
        score = verdict.tier_scores.get(tier)
        rows.append({
            "tier": TIER_LABELS[tier],
            "score": None if score is None else round(score, 4),
            "status": "skipped" if score is None else ("failed" if verdict.failed_tier is tier else "passed"),
        })
    return rows


# HELPER COMPONENT
# Card with the decision, feedback text and per-tier scores for one image
def verdict_display(verdict: Verdict, name: str):
    container = st.container(border=True)
    color = verdict_color(verdict)
    container.subheader(body=f"**{name}**", anchor=False)
    container.write(f"**Decision**: :{color}[{verdict.decision.value.upper()}]")
    container.write(f"**Feedback**: {feedback_message(verdict.feedback_code)}")
    container.dataframe(tier_table(verdict), use_container_width=True, hide_index=True)
    container.caption("Resolution, cornea completeness and focus checks are not implemented yet.")


# PAGE
# Upload a captured eye image and get an immediate accept/retake verdict
def assess_page(gate: QualityGate):
    st.header("Eye Image Quality Check", anchor=False)
    st.write("Upload an anterior-segment eye photo. You will be told straight away whether it is usable or needs to be retaken.")

    uploaded_file = st.file_uploader(
        label="Choose PNG or JPEG Image",
        accept_multiple_files=False,
        type=["png", "jpg", "jpeg"],
    )
    if not uploaded_file:
        return

    data = uploaded_file.getvalue()
    if len(data) > gate.max_upload_bytes:
        st.error(f"Image is larger than {gate.max_upload_bytes} bytes.")
        return

    col1, col2 = st.columns([0.4, 0.6])
    with col1:
        st.image(data, caption=uploaded_file.name, use_column_width=True)
    with col2:
        started = time.perf_counter()
        try:
            verdict = gate.assess_bytes(data)
        except (MalformedImage, UnsupportedFormat, TooLarge) as e:
            st.error(f"Could not read the image: {e.message}")
            return
        except DetectorFailure as e:
            st.error(f"The {e.tier} check failed: {e.message}")
            return
        elapsed_ms = (time.perf_counter() - started) * 1000.0
        log.verdict_event(verdict.decision.value, verdict.feedback_code.value, elapsed_ms)
        verdict_display(verdict, uploaded_file.name)

    st.session_state["history"].append({
        "image": uploaded_file.name,
        "decision": verdict.decision.value,
        "feedback_code": verdict.feedback_code.value,
    })
    with st.expander(label="Session History", expanded=False):
        st.dataframe(st.session_state["history"], use_container_width=True, hide_index=True)
