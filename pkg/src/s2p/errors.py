"""Exception hierarchy shared across the package.

Every failure mode a caller is expected to branch on gets its own class;
string matching on messages is never required.
"""

from __future__ import annotations


class S2PError(Exception):
    """Base class for all package errors."""


class ConfigRangeError(S2PError):
    """A config field violated its allowed range."""

    def __init__(self, field: str, detail: str = ""):
        self.field = field
        super().__init__(f"RANGE({field}){': ' + detail if detail else ''}")


class UnknownConfigKeyError(S2PError):
    """Config JSON contained a key that is not part of the schema."""

    def __init__(self, key: str):
        self.key = key
        super().__init__(f"unknown config key: {key!r}")


class DimMismatchError(S2PError):
    """Vector dimensions or embedder ids disagree."""


class EmptyEpisodeError(S2PError):
    """An episode with zero samples cannot be stored."""


class CorruptManifestError(S2PError):
    """Store manifest is unreadable or internally inconsistent."""


class MissingFrameError(S2PError):
    """A sample or frame file referenced by the manifest is absent."""

    def __init__(self, path: str):
        self.path = path
        super().__init__(f"missing store file: {path}")


class StoreLockedError(S2PError):
    """Another writer holds the store lock."""


class BackendUnavailableError(S2PError):
    """Remote backend kept failing after the retry budget was spent."""


class BackendTimeoutError(BackendUnavailableError):
    """Remote backend did not answer within the timeout."""


class HttpStatusError(BackendUnavailableError):
    """Remote backend answered with a non-success HTTP status."""

    def __init__(self, status: int, detail: str = ""):
        self.status = status
        super().__init__(f"HTTP_STATUS({status}){': ' + detail if detail else ''}")


class CapabilityExceededError(S2PError):
    """Conversation exceeds what the backend accepts (turns or images)."""


class CassetteMissError(S2PError):
    """Replay requested for a conversation the cassette never saw."""


class RunAbortedError(S2PError):
    """A live run was stopped by an operator mid-episode."""


class EmptyMemoryError(S2PError):
    """Selection was requested from an empty memory."""


class KTooLargeError(S2PError):
    """Requested more samples than the memory holds."""


class FrameTooSmallError(S2PError):
    """Frame below the minimum size for annotation."""


class RobotOffFloorError(S2PError):
    """Robot pixel does not sit on the traversable mask."""


class NoCandidatesError(S2PError):
    """Every generated keypoint was filtered out by the mask."""


class SetupMismatchError(S2PError):
    """Context samples and the live frame use different camera setups."""


class AnswerParseError(S2PError):
    """Base class for failures while parsing a model answer."""


class NoJsonFoundError(AnswerParseError):
    """Raw model output contained no JSON object."""


class SchemaViolationError(AnswerParseError):
    """Answer JSON present but a field is missing or mistyped."""

    def __init__(self, field: str, detail: str = ""):
        self.field = field
        super().__init__(f"SCHEMA_VIOLATION({field}){': ' + detail if detail else ''}")


class UnknownLabelError(AnswerParseError):
    """Answer referenced a label id absent from the queried frame."""

    def __init__(self, label_id: int):
        self.label_id = label_id
        super().__init__(f"UNKNOWN_LABEL({label_id})")


class NoActiveSessionError(S2PError):
    """API call requires a live demo/run session."""


class MissingLengthsError(S2PError):
    """SR/SPL requested on results without path lengths."""


class EmptyResultSetError(S2PError):
    """A metric was requested over zero episodes."""
