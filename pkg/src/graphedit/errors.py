"""Exception hierarchy shared by every module."""


class GraphEditError(Exception):
    pass


class InvalidInputError(GraphEditError, ValueError):
    pass


class InvalidGraphError(InvalidInputError):
    pass


class ParseError(GraphEditError):
    def __init__(self, message: str, line: int | None = None, path: str | None = None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}"
        super().__init__(f"{where}: {message}" if where else message)


class OracleError(GraphEditError):
    """Finite-difference oracle hit a non-finite evaluation."""


class TrainingError(GraphEditError):
    def __init__(self, message: str, epoch: int | None = None):
        self.epoch = epoch
        super().__init__(message if epoch is None else f"epoch {epoch}: {message}")


class EditError(GraphEditError):
    pass


class CheckpointError(GraphEditError):
    pass


class NumericError(GraphEditError):
    pass


class DegenerateEditError(GraphEditError):
    """Binary edit direction undefined because the prediction sits exactly at 0.5."""
