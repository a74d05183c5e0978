"""Exception hierarchy shared by every stage.

The CLI maps these onto exit codes: configuration problems exit 2, bad input
data exits 3 and broken internal invariants exit 4.
"""


class OctaForgeError(Exception):
    exit_code = 1


class ConfigError(OctaForgeError, ValueError):
    exit_code = 2


class DataError(OctaForgeError, ValueError):
    exit_code = 3


class GraphFormatError(DataError):
    """Malformed graph CSV input; carries the offending file and line."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)


class VolumeFormatError(DataError):
    pass


class InvariantError(OctaForgeError, RuntimeError):
    exit_code = 4


class StageError(OctaForgeError):
    """Wraps an error raised inside one pipeline stage."""

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        default = DataError.exit_code if isinstance(cause, OSError) else InvariantError.exit_code
        self.exit_code = getattr(cause, "exit_code", default)
        super().__init__(f"[{stage}] {cause}")
