"""Knowledge-graph grounded multiple-choice QA with path-attentive graph scoring."""

__version__ = "0.1.0"
