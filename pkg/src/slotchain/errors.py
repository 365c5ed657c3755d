"""Exception types shared across the pipeline."""

from __future__ import annotations


class SlotchainError(Exception):
    """Base class for all pipeline errors."""


class FormatError(SlotchainError):
    """Input file does not match the expected layout.

    Messages include a path to the offending record (file, dialogue,
    turn or line number) whenever one is known.
    """


class ValidationError(SlotchainError):
    """A structural invariant of the data model is violated."""


class UnknownSlotError(SlotchainError):
    """A slot_id does not resolve against the schema."""


class UnknownDialogueError(SlotchainError):
    """A dialogue_id does not resolve against the corpus."""


class TurnOutOfRangeError(SlotchainError):
    """A turn index falls outside 1..N for its dialogue."""


class EmptyChainError(SlotchainError):
    """An operation requiring a non-empty slot chain received an empty one."""


class EmptyGenerationError(SlotchainError):
    """A model generation was empty or whitespace-only."""


class DuplicatePredictionError(SlotchainError):
    """Two prediction records share the same (dialogue, turn, slot) key."""


class InvalidFractionError(SlotchainError):
    """A sampling fraction falls outside (0, 1]."""


class NetworkError(SlotchainError):
    """A remote completion request failed after all retries."""


class AuthError(SlotchainError):
    """The API key is missing or was rejected. Never retried."""


class EmptyCompletionError(SlotchainError):
    """The remote model returned a whitespace-only completion."""
