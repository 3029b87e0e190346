import pandas as pd
import streamlit as st

from utils.cascade import QualityGate, hierarchical_eval
from utils.errors import IrisGateError
from utils.manifest import iter_hier_samples
from utils.metrics import HierConfusion, MetricReport, collapse_binary, format_report
from utils.quality_data import HIER_ORDER


def confusion_frame(h: HierConfusion) -> pd.DataFrame:
    """Counts with row fractions in parentheses, ground truth down the side."""
    labels = [label.value for label in HIER_ORDER]
    cells = [
        [f"{count} ({fraction:.2f})" if fraction is not None else str(count) for count, fraction in zip(counts, fractions)]
        for counts, fractions in zip(h.counts, h.row_fractions())
    ]
    return pd.DataFrame(cells, index=labels, columns=labels)


def metrics_frame(report: MetricReport) -> pd.DataFrame:
    return pd.DataFrame(list(format_report(report).items()), columns=["metric", "value"])


# PAGE
# Run the cascade over a hierarchically labelled manifest and show the tables
def evaluate_page(gate: QualityGate):
    st.header("Cascade Evaluation", anchor=False)

    with st.form(key="evaluate_form", border=False):
        manifest_path = st.text_input(label="Manifest CSV:red[*]", help="CSV with id, path and hier_label columns.").strip()
        submit = st.form_submit_button("Run Evaluation")

    if not submit:
        return
    if not manifest_path:
        st.error("Please provide a manifest path.")
        return

    with st.status("Evaluating cascade...") as status:
        try:
            confusion, report = hierarchical_eval(iter_hier_samples(manifest_path), gate.tier1, gate.tier2)
        except IrisGateError as e:
            status.update(label="Evaluation failed.", state="error")
            st.error(e.message)
            return
        status.update(label=f"Evaluated {confusion.total} images.", state="complete", expanded=False)

    st.subheader(body="**Hierarchical Confusion**", anchor=False)
    st.dataframe(confusion_frame(confusion), use_container_width=True)

    binary = collapse_binary(confusion)
    col1, col2 = st.columns([0.5, 0.5])
    with col1:
        st.subheader(body="**Collapsed Binary**", anchor=False)
        st.write(f"TP {binary.tp} · FP {binary.fp} · TN {binary.tn} · FN {binary.fn}")
    with col2:
        st.subheader(body="**Metrics**", anchor=False)
        st.dataframe(metrics_frame(report), use_container_width=True, hide_index=True)
