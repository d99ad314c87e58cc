"""Workbench for bootstrapping binary intent classifiers from chat logs.

The workflow is search, label, propagate: an analyst (or a scripted oracle)
issues keyword queries against an utterance corpus, labels a small sample of
each result neighborhood, and lets majority agreement propagate a weak label
to the rest of the neighborhood.  A generative label model denoises the weak
labels into per-utterance marginals, which train downstream classifiers.
"""

__version__ = "0.1.0"

from .errors import (
    CorpusError,
    LabelModelError,
    QueryParseError,
    SessionError,
    SlpError,
    TrainError,
)

__all__ = [
    "CorpusError",
    "LabelModelError",
    "QueryParseError",
    "SessionError",
    "SlpError",
    "TrainError",
    "__version__",
]
