"""Exception types shared across the package."""


class AppformerError(Exception):
    """Base class for all package errors."""


class ShapeError(AppformerError, ValueError):
    pass


class NonFiniteError(AppformerError, FloatingPointError):
    pass


class VocabLookupError(AppformerError, IndexError):
    pass


class ConfigError(AppformerError, ValueError):
    pass


class ParseError(AppformerError, ValueError):
    """Malformed input file; carries the 1-based line number when known."""

    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}"
        super().__init__(f"{where}: {message}" if where else message)


class MissingInputError(AppformerError, FileNotFoundError):
    """A stage was run before the stage that produces its inputs."""

    def __init__(self, path, stage, producer=None):
        self.path = path
        hint = f" (run `app {producer}` first)" if producer else ""
        super().__init__(f"{stage}: missing input {path}{hint}")
