import streamlit as st
from dotenv import load_dotenv

from components import (
    assess_page,
    evaluate_page,
)
from utils.cascade import QualityGate
from utils.config import load_config, service_config


# Load environment variables
load_dotenv()


# Detectors are loaded once per server process and shared by every session
@st.cache_resource
def load_gate() -> QualityGate:
    return QualityGate.from_config(service_config(load_config()))


# Set up page session state
if "page" not in st.session_state:
    st.session_state["page"] = {
        "name": "Assess",
        "data": None,
    }
if "history" not in st.session_state:
    st.session_state["history"] = []


# Main app function
if __name__=="__main__":
    st.set_page_config(page_title="Eye Image Quality Gate", page_icon="👁️")

    with st.sidebar:
        page_name = st.radio(label="Page", options=["Assess", "Evaluate"])
        st.session_state["page"]["name"] = page_name

    gate = load_gate()
    if st.session_state["page"]["name"] == "Assess":
        assess_page(gate)
    elif st.session_state["page"]["name"] == "Evaluate":
        evaluate_page(gate)
    else:
        st.error(body="Page Not Found.")
