"""Exception hierarchy shared by every module.

Each class carries the CLI exit code it maps to, so the command layer can
translate failures without a lookup table.
"""


class MacoError(Exception):
    exit_code = 1


class InvalidInputError(MacoError, ValueError):
    exit_code = 1


class InvalidTargetError(MacoError, ValueError):
    """Objective or layer does not fit the model it is evaluated on."""

    exit_code = 3


class UnsupportedModelError(MacoError):
    exit_code = 3


class NumericFailureError(MacoError, ArithmeticError):
    exit_code = 4

    def __init__(self, message, step=None):
        super().__init__(message if step is None else f"{message} (step {step})")
        self.step = step


class EmptyDatasetError(MacoError):
    exit_code = 2


class FormatError(MacoError):
    """Malformed binary container; `offset` is the byte position of the fault."""

    exit_code = 2

    def __init__(self, message, offset=None):
        super().__init__(message if offset is None else f"{message} at byte offset {offset}")
        self.offset = offset


class TrainingError(MacoError):
    exit_code = 4
