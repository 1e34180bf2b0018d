"""
Exception hierarchy for shredlab.

Every error raised on purpose by the package derives from ShredError, so callers
(and the CLI) can tell contract violations apart from numerical failures:

- ConfigError: invalid configuration or a violated precondition (CLI exit code 2)
- FieldFormatError and subclasses: problems reading an STF1 container
- ShapeError: operands whose shapes do not agree
- TapeError: misuse of the reverse-mode tape
- NumericalError: NaN/Inf during training or a divergent rollout (CLI exit code 3)
"""

from typing import Optional


class ShredError(Exception):
    """Base class for all shredlab errors."""


class ConfigError(ShredError, ValueError):
    """Invalid configuration or violated precondition."""


class NotSindyModelError(ConfigError):
    """Raised when symbolic extraction is requested from a model without SINDy-Attention."""


class FieldFormatError(ShredError, ValueError):
    """Base class for STF1 container errors."""


class BadMagicError(FieldFormatError):
    """The file does not start with the STF1 magic bytes."""


class HeaderSizeError(FieldFormatError):
    """Header length or payload length disagrees with the header contents."""


class NonFiniteDataError(FieldFormatError):
    """The payload contains NaN or Inf values."""


class ShapeError(ShredError, ValueError):
    """Operand shapes do not agree."""

    def __init__(self, op: str, *shapes):
        rendered = " vs ".join(str(tuple(s)) for s in shapes)
        super().__init__(f"{op}: shape mismatch {rendered}")
        self.op = op
        self.shapes = shapes


class TapeError(ShredError, RuntimeError):
    """Reverse-mode tape used out of order."""


class NumericalError(ShredError, ArithmeticError):
    """A loss or state became non-finite.

    Attributes:
        reason: Message without the location suffix
        epoch: Epoch (1-based) where the failure happened, if known
        batch: Batch index within the epoch, if known
        substep: Euler sub-step index, if the failure came from a rollout
    """

    def __init__(self, message: str, epoch: Optional[int] = None,
                 batch: Optional[int] = None, substep: Optional[int] = None):
        location = []
        if epoch is not None:
            location.append(f"epoch={epoch}")
        if batch is not None:
            location.append(f"batch={batch}")
        if substep is not None:
            location.append(f"substep={substep}")
        suffix = f" ({', '.join(location)})" if location else ""
        super().__init__(message + suffix)
        self.reason = message
        self.epoch = epoch
        self.batch = batch
        self.substep = substep
