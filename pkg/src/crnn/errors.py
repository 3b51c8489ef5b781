"""Exception types shared across the package."""


class UsageError(ValueError):
    """Caller supplied arguments that violate an operation's preconditions."""


class FormatError(ValueError):
    """A file on disk (dataset, checkpoint, config) could not be parsed."""
