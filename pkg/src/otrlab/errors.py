"""Exception taxonomy shared across the package.

The CLI maps these onto distinct exit codes so scripts can tell apart
configuration mistakes, bad or missing data, and numerical breakdowns.
"""


class OtrlabError(Exception):
    """Base class for all package errors."""


class ConfigError(OtrlabError):
    """Invalid configuration value or CLI usage."""


class DataError(OtrlabError):
    """Dataset file, schema, or contract violation."""


class DimensionError(OtrlabError):
    """Shape or dimension mismatch between numerical inputs."""


class SizeError(OtrlabError):
    """Problem instance too large for the requested solver."""


class StateError(OtrlabError):
    """Illegal environment transition, e.g. stepping a finished episode."""


class NumericalError(OtrlabError):
    """NaN/Inf in iterates or gradients, or solver breakdown."""


class LabelingError(OtrlabError):
    """Reward labeling failed for one or more episodes."""


EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4


def exit_code_for(exc: BaseException) -> int:
    """Exit code for an exception, used by the CLI entry point."""
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, (DataError, DimensionError, SizeError, StateError)):
        return EXIT_DATA
    if isinstance(exc, (NumericalError, LabelingError)):
        return EXIT_NUMERICAL
    return 1
