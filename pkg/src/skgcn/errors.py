"""Shared exception types."""


class ShapeError(ValueError):
    """Operands or model inputs have incompatible dimensions."""


class ParseError(ValueError):
    """A data file is malformed; carries the file path and line number."""

    def __init__(self, path, lineno, message):
        super().__init__(f"{path}:{lineno}: {message}")
        self.path = str(path)
        self.lineno = lineno


class TrainingDiverged(RuntimeError):
    """Training produced a non-finite loss and was aborted."""
