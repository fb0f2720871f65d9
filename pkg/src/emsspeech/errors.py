"""Exception hierarchy shared across the toolkit.

``ConfigError`` marks usage/configuration problems (CLI exit code 1);
every other subclass of :class:`EmsSpeechError` is a runtime failure
(CLI exit code 2).
"""


class EmsSpeechError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(EmsSpeechError):
    """Invalid configuration: unknown keys, bad values, missing sections."""


class CorpusError(EmsSpeechError):
    """Corpus on disk is missing, corrupt, or inconsistent with its manifest."""


class SplitError(EmsSpeechError):
    """A requested corpus split is infeasible (e.g. an empty class cell)."""


class MaskingError(EmsSpeechError):
    """A mask construction was rejected (e.g. an all-zero kernel mask)."""


class EmptyScopeError(EmsSpeechError):
    """A masked-only loss was requested but the plan masks no frames."""


class NonFiniteError(EmsSpeechError):
    """A model produced non-finite activations or losses."""


class DivergenceError(NonFiniteError):
    """Training hit a non-finite loss; carries a diagnostic record."""

    def __init__(self, message: str, record: dict | None = None):
        super().__init__(message)
        self.record = record or {}


class ArchitectureMismatchError(EmsSpeechError):
    """A checkpoint does not match the architecture expected by the caller."""
