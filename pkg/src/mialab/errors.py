"""Exception types shared across the package.

All validation failures derive from ValueError so callers can catch broadly;
the CLI maps ConfigError (and argparse usage errors) to exit code 2 and
everything else to exit code 1.
"""


class ConfigError(ValueError):
    """A configuration value or combination of values is invalid."""


class DimensionError(ValueError):
    """Array shapes do not line up with what the operation requires."""


class ParseError(ValueError):
    """A data file could not be parsed; the message names the offending line."""


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss; the message names epoch and batch."""
