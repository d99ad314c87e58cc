"""Exception hierarchy shared across the package.

Everything user-facing derives from SlpError so the CLI and the HTTP service
can map failures to exit codes / status codes in one place.
"""

from __future__ import annotations


class SlpError(Exception):
    """Base class for all expected workbench failures."""


class CorpusError(SlpError):
    """Corpus ingestion, persistence, or test-set loading failed."""


class QueryParseError(SlpError):
    """Query text could not be parsed; carries the offending position."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (position {position})")
        self.position = position


class SessionError(SlpError):
    """Illegal session operation (bad state, ineligible candidate, ...)."""


class ReplayError(SessionError):
    """Session script could not be replayed against the given corpus."""


class LabelModelError(SlpError):
    """Label matrix assembly or generative model fitting failed."""


class TrainError(SlpError):
    """Featurization, model training, or evaluation failed."""


class ConfigError(SlpError):
    """Invalid experiment or harness configuration."""
