"""Exception hierarchy shared by every module.

Each exception carries a ``category`` used by the command line front-end to
pick an exit code.
"""


class GbmError(Exception):
    category = "error"
    exit_code = 1


class ShapeError(GbmError, ValueError):
    category = "shape"
    exit_code = 2


class EmptyInputError(GbmError, ValueError):
    category = "empty-input"
    exit_code = 3


class ParameterError(GbmError, ValueError):
    category = "parameter"
    exit_code = 4


class ConfigurationError(GbmError, ValueError):
    category = "configuration"
    exit_code = 4


class ParseError(GbmError, ValueError):
    category = "parse"
    exit_code = 5


class MalformedHeaderError(ParseError):
    pass


class TruncatedPayloadError(ParseError):
    pass


class DimensionMismatchError(ParseError):
    pass


class DegenerateInputError(GbmError, ValueError):
    category = "degenerate-input"
    exit_code = 6


class DegenerateComponentError(GbmError, ArithmeticError):
    category = "degenerate-component"
    exit_code = 6

    def __init__(self, components, message=None):
        self.components = tuple(int(k) for k in components)
        super().__init__(message or f"components with zero responsibility mass: {self.components}")


class DuplicateClassError(GbmError, KeyError):
    category = "duplicate-class"
    exit_code = 7

    def __str__(self):
        return str(self.args[0]) if self.args else "duplicate class"


class EmptyMemoryError(GbmError, LookupError):
    category = "empty-memory"
    exit_code = 8


class DivergenceError(GbmError, ArithmeticError):
    category = "divergence"
    exit_code = 9

    def __init__(self, epoch, message=None):
        self.epoch = int(epoch)
        super().__init__(message or f"non-finite loss at epoch {self.epoch}")


class TaskError(GbmError):
    """Wraps an error raised while processing one task of a run."""

    def __init__(self, task_index, cause):
        self.task_index = int(task_index)
        self.cause = cause
        self.category = getattr(cause, "category", "error")
        self.exit_code = getattr(cause, "exit_code", 1)
        super().__init__(f"task {self.task_index}: {cause}")
