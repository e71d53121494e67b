"""
Error types for the mdpulse stack.

Every failure a caller is expected to handle is a subclass of MdPulseError,
so the CLI can turn it into a machine-readable error line.
"""


class MdPulseError(Exception):
    """Base class for all expected mdpulse failures."""


class SequenceTooShort(MdPulseError):
    pass


class ConstantInput(MdPulseError):
    pass


class InvalidTemplate(MdPulseError):
    pass


class RegionOutOfBounds(MdPulseError):
    pass


class InvalidRange(MdPulseError):
    pass


class UpsampleRequested(MdPulseError):
    pass


class ClipTooShort(MdPulseError):
    pass


class ShapeMismatch(MdPulseError):
    pass


class NonDivisibleDims(MdPulseError):
    pass


class NonFiniteValue(MdPulseError):
    pass


class NoInputEnabled(MdPulseError):
    pass


class NoTargetEnabled(MdPulseError):
    pass


class MissingTarget(MdPulseError):
    pass


class InvalidConfig(MdPulseError):
    pass


class EmptyDataset(MdPulseError):
    pass


class NonFiniteLoss(MdPulseError):
    """Raised when a training batch produces a NaN or infinite loss."""

    def __init__(self, batch_index: int, epoch: int, value: float):
        super().__init__(
            f"Non-finite loss {value!r} at epoch {epoch}, batch {batch_index}"
        )
        self.batch_index = batch_index
        self.epoch = epoch


class SignalTooShort(MdPulseError):
    pass


class NoPowerInBand(MdPulseError):
    pass


class NoBeatsFound(MdPulseError):
    pass


class NoPairedBeats(MdPulseError):
    pass


class LengthMismatch(MdPulseError):
    pass


class IoError(MdPulseError):
    """Raised when a required file is missing or unreadable."""

    def __init__(self, path, reason: str = "not found"):
        super().__init__(f"{path}: {reason}")
        self.path = str(path)


class SaturationWarning(UserWarning):
    """More than 1% of skin pixels were clamped while rendering."""
