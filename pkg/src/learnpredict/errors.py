"""Exception hierarchy; each class carries the CLI exit code it maps to."""


class LearnPredictError(Exception):
    exit_code = 1


class InputError(LearnPredictError):
    """Unreadable or missing input file."""

    exit_code = 2


class ConfigError(LearnPredictError):
    """Invalid configuration value."""

    exit_code = 2


class ValidationError(LearnPredictError):
    """Inputs are readable but inconsistent or insufficient."""

    exit_code = 3


class TrainingError(LearnPredictError):
    """Training diverged or produced non-finite values."""

    exit_code = 4
