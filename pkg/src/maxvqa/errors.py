"""Exception hierarchy shared across the package.

The CLI maps each family onto an exit code (usage/config = 1, data = 2,
backbone = 3), so library code raises the narrowest subclass it can.
"""


class MaxVQAError(Exception):
    exit_code = 2


class ConfigError(MaxVQAError, ValueError):
    exit_code = 1


class UnknownAxisError(ConfigError, KeyError):
    def __init__(self, code):
        self.code = code
        super().__init__(f"unknown axis code: {code!r}")

    def __str__(self):
        return self.args[0]


class DataError(MaxVQAError, ValueError):
    exit_code = 2


class FrameTooSmallError(DataError):
    pass


class GeometryMismatchError(DataError):
    pass


class DecodeError(DataError):
    pass


class CacheMissError(DataError, LookupError):
    pass


class DegenerateInputError(DataError):
    """Constant vectors, empty tables, batches that cannot be correlated."""


class BackboneError(MaxVQAError, RuntimeError):
    exit_code = 3
