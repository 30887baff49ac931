"""Exception hierarchy shared by every ctdf module."""


class CtdfError(Exception):
    """Base class; the CLI maps any subclass to a one-line ``error:`` message."""


class ShapeError(CtdfError, ValueError):
    pass


class ConfigError(CtdfError, ValueError):
    pass


class ContractError(CtdfError, RuntimeError):
    """A caller broke a usage contract (stale tape, wrong dtype, bad step)."""


class UnsupportedError(CtdfError, ValueError):
    pass


class DegenerateInputError(CtdfError, ValueError):
    """A quantity is undefined for the given input (zero norm, zero denominator)."""


class FormatError(CtdfError, ValueError):
    """A file on disk does not match the expected binary/text layout."""


class DataIOError(CtdfError, OSError):
    """A referenced data file is missing or unreadable."""
