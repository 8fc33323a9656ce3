"""Domain error hierarchy.

Every error carries a stable ``code`` (the class name) and the ids of the
records involved, so the HTTP layer and the CLI can emit structured
``{code, message, subject_refs}`` bodies without string matching.
"""

from __future__ import annotations


class DelaccError(Exception):
    """Base class for all domain errors."""

    def __init__(self, message: str, *, subject_refs: list[str] | None = None):
        super().__init__(message)
        self.message = message
        self.subject_refs = list(subject_refs or [])

    @property
    def code(self) -> str:
        return type(self).__name__

    def to_dict(self) -> dict:
        return {
            "code": self.code,
            "message": self.message,
            "subject_refs": self.subject_refs,
        }


# -- registry ----------------------------------------------------------------

class EmptySurname(DelaccError):
    pass


class UnusableSurname(DelaccError):
    pass


class Duplicate(DelaccError):
    pass


class UnknownParticipant(DelaccError):
    pass


class UnknownController(DelaccError):
    pass


class ParticipantNotActive(DelaccError):
    pass


class StatusOrder(DelaccError):
    """Participant status may only move recruited -> active -> exited."""


class InvalidContact(DelaccError):
    pass


class InconsistentScopes(DelaccError):
    pass


class InvalidInterestLevel(DelaccError):
    pass


class NoActiveGrant(DelaccError):
    pass


class TimestampOrder(DelaccError):
    pass


class ConsentMissing(DelaccError):
    pass


# -- lifecycle ---------------------------------------------------------------

class NotOnTargetList(DelaccError):
    pass


class IllegalTransition(DelaccError):
    def __init__(self, state: str, event: str, *, subject_refs: list[str] | None = None):
        super().__init__(
            f"event {event!r} is not legal in state {state!r}",
            subject_refs=subject_refs,
        )
        self.state = state
        self.event = event


# -- mailroom ----------------------------------------------------------------

class ConsentBlocked(DelaccError):
    pass


class ParseError(DelaccError):
    def __init__(self, message: str, *, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class AuthorizationMismatch(DelaccError):
    pass


class UnknownThread(DelaccError):
    pass


class UnknownMessage(DelaccError):
    pass


# -- letters -----------------------------------------------------------------

class TemplateError(DelaccError):
    pass


class NotInState(DelaccError):
    pass


class ProofMissing(DelaccError):
    pass


class ConsentFormMissing(DelaccError):
    pass


class NothingToConsent(DelaccError):
    pass


class NotYetSent(DelaccError):
    pass


class FollowupClosed(DelaccError):
    """Follow-up letters are pointless once a request left the active states."""


# -- analytics ---------------------------------------------------------------

class TooEarly(DelaccError):
    pass


class EmptyCampaign(DelaccError):
    pass


# -- vault -------------------------------------------------------------------

class NothingToRedact(DelaccError):
    pass


class CampaignOpen(DelaccError):
    pass


class UnknownBlob(DelaccError):
    pass


# -- service -----------------------------------------------------------------

class InvalidConfig(DelaccError):
    pass


class SnapshotExpired(DelaccError):
    """A pinned snapshot version no longer matches the write-model."""


class AuthRequired(DelaccError):
    pass


class Forbidden(DelaccError):
    pass


class NotFound(DelaccError):
    pass
