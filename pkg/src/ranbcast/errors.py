"""Exception hierarchy.

Two families matter to callers: :class:`InputError` (bad scenario, bad
arguments; CLI exit code 2) and :class:`RuntimeInvariantViolation` (the
simulator caught itself breaking a safety property; CLI exit code 1).
"""

from __future__ import annotations


class SimError(Exception):
    """Base class for every error raised by this package."""


class InputError(SimError):
    """The caller supplied something invalid."""


class RuntimeInvariantViolation(SimError):
    """A module invariant was breached while the simulation was running."""


# topology
class DuplicateId(InputError):
    pass


class DanglingReference(InputError):
    pass


class LimitExceeded(InputError):
    pass


class UnsupportedNumerology(InputError):
    pass


class UnknownCell(InputError):
    pass


class InvalidLink(InputError):
    pass


# rbma
class IsdViolation(InputError):
    pass


class CarrierMismatch(InputError):
    pass


class OverlappingReservation(InputError):
    pass


class InvalidWindow(InputError):
    pass


class UnknownRbma(InputError):
    pass


class CyclicComposite(InputError):
    pass


class InvalidComposite(InputError):
    pass


class UnknownService(InputError):
    pass


class NotThreeColorable(InputError):
    pass


# ran_sync
class UnreachableParticipant(InputError):
    pass


class SequenceMismatch(InputError):
    pass


# bearer_switching
class InvalidRlcMode(InputError):
    pass


class InvalidXrbConfig(InputError):
    pass


class EmptyUeSet(InputError):
    pass


class UndecidedUe(InputError):
    pass


class InvalidMeasurement(InputError):
    pass


# rrc_mobility
class RomUeHasNoContext(InputError):
    pass


class PreconditionNotMet(InputError):
    pass


# sfn_scheduler
class AllocationConflict(RuntimeInvariantViolation):
    """Two owners claimed one (slot, PRB) cell. Always a bug upstream."""


# harness
class SchemaError(InputError):
    pass


class NoSuchLink(InputError):
    pass


class IllegalMessage(RuntimeInvariantViolation):
    """Message body kind is not allowed on the interface it was sent over."""


class ColumnMismatch(InputError):
    pass


class NonMonotoneTime(InputError):
    pass


class InsufficientSamples(InputError):
    pass


class IoFailure(SimError):
    pass


def raise_collected(errors: list[SimError]) -> None:
    """Raise the first of ``errors`` with the full list attached as ``.errors``."""
    if errors:
        first = errors[0]
        first.errors = list(errors)
        raise first
