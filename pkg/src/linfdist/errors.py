"""Exception types shared by the file-format and configuration code."""


class FormatError(ValueError):
    """Base class for malformed binary inputs (datasets, checkpoints)."""


class BadMagicError(FormatError):
    pass


class VersionError(FormatError):
    pass


class TruncatedError(FormatError):
    pass


class CountMismatchError(FormatError):
    pass


class ConfigError(ValueError):
    pass
