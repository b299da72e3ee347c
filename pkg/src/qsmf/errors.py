"""Exception hierarchy shared by all qsmf modules."""


class QSMFError(Exception):
    """Base class for every error raised by the package."""


class DomainError(QSMFError, ValueError):
    """An argument lies outside the interval an operation is defined on."""


class NonProbabilityMeasure(QSMFError, ValueError):
    """A measure has negative masses or does not sum to one."""


class MassMismatch(QSMFError, ValueError):
    """Two measures compared by the CDF metric carry different total mass."""


class LambdaOutOfRange(QSMFError, ValueError):
    """Response probability above 1/2 where the reproduction density is needed."""


class InternalInvariantViolation(QSMFError, RuntimeError):
    pass


class StepTooLarge(QSMFError, RuntimeError):
    """The mean-field step produced masses that are negative beyond round-off."""


class NoQualifyingCluster(QSMFError, ValueError):
    pass


class DegenerateFit(QSMFError, ValueError):
    """Fewer than three usable points for a log-log fit."""


class InsufficientReplicas(QSMFError, RuntimeError):
    pass


class ConfigError(QSMFError, ValueError):
    """Base for configuration problems; carries an optional line number."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ParseError(ConfigError):
    pass


class ValidationError(ConfigError):
    pass


class UnknownKey(ConfigError):
    pass
