"""Exception types shared across the toolkit."""


class AdvDefenseError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(AdvDefenseError, ValueError):
    """Operand shapes are inconsistent with the requested operation."""


class GradientError(AdvDefenseError, RuntimeError):
    """Backward-pass contract violated: non-scalar loss, missing or
    non-finite gradient."""


class IdxFormatError(AdvDefenseError, ValueError):
    """Malformed IDX file (base class)."""


class IdxMagicError(IdxFormatError):
    """IDX header magic does not match the expected value."""


class IdxTruncatedError(IdxFormatError):
    """IDX payload is shorter than its header promises."""


class IdxCountError(IdxFormatError):
    """Image and label files disagree on the number of items."""


class CheckpointError(AdvDefenseError, ValueError):
    """Model checkpoint file is malformed or incompatible."""


class AdvDatasetError(AdvDefenseError, ValueError):
    """Persisted adversarial dataset violates its invariants."""


class ConfigError(AdvDefenseError, ValueError):
    """Run configuration is missing, malformed, or unresolvable."""


class PhaseError(AdvDefenseError, RuntimeError):
    """A pipeline phase failed; carries the phase name for reporting."""

    def __init__(self, phase: str, message: str):
        super().__init__(f"[{phase}] {message}")
        self.phase = phase
