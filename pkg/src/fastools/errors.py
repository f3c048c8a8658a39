"""Exception hierarchy for the toolkit.

Every domain failure raised by this package derives from ``ToolkitError`` so
callers (and the CLI) can catch one type. Programming errors — violated
invariants on internal types — raise plain ``ValueError``/``TypeError`` as
usual and are not part of the domain hierarchy.
"""

from __future__ import annotations


class ToolkitError(Exception):
    """Base class for all domain errors raised by fastools."""


class IoError(ToolkitError):
    """A file could not be read or written (missing, unreadable, bad path)."""


class DecodeError(ToolkitError):
    """Bytes were readable but are not a supported/valid image payload."""


class NonFiniteError(ToolkitError):
    """A numeric field contained NaN or infinity where finite values are required."""


class InvalidArgument(ToolkitError):
    """A tool/operator argument failed validation (bad bbox, wrong schema, ...)."""


class ImageTooSmall(ToolkitError):
    """An operator received an image below its minimum supported size."""


class GroupTooSmall(ToolkitError):
    """A reward group had fewer than two rollouts; advantages are undefined."""


class InsufficientData(ToolkitError):
    """Too few examples (per class) to fit a model."""


class DegenerateLabels(ToolkitError):
    """Training labels contain a single class; a classifier cannot be fit."""


class FeatureSpecMismatch(ToolkitError):
    """A model was applied to features from a different feature-spec version."""


class InvalidProbability(ToolkitError):
    """A probability was non-finite or outside [0, 1]."""


class MissingClass(ToolkitError):
    """A metric needing both classes received scores from only one."""


class MissingContext(ToolkitError):
    """A prompt builder was asked for a stage without its required context."""


class ClientError(ToolkitError):
    """Base class for chat-client failures."""


class TransportError(ClientError):
    """The HTTP request could not be completed (after retries, if retryable)."""


class ProtocolError(ClientError):
    """The endpoint answered, but not in the expected response shape."""


class AuthError(ClientError):
    """The endpoint rejected our credentials (HTTP 401/403)."""


class ScriptExhausted(ClientError):
    """A scripted mock client ran out of scripted completions."""


class ConfigError(ToolkitError):
    """A configuration file failed validation (unknown keys, bad types/values)."""
