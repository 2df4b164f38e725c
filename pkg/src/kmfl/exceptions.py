"""Exception hierarchy shared by all kmfl modules."""


class KmflError(Exception):
    """Base class for every error raised by kmfl."""


class DomainError(KmflError, ValueError):
    """A point lies outside the state box of a kernel or model."""


class InputError(KmflError, ValueError):
    """A control input, horizon or other argument is invalid."""


class InvariantError(KmflError, ValueError):
    """A value violates a structural invariant (weights, shapes)."""


class NumericalError(KmflError, ArithmeticError):
    """A quantity that must be nonnegative came out clearly negative."""


class SizeError(KmflError, ValueError):
    """An exact solver was asked to handle a problem above its size cap."""


class EstimationError(KmflError, RuntimeError):
    """A sampled estimator had no usable samples."""


class CertificateError(KmflError, RuntimeError):
    """A relaxed dynamic programming certificate cannot be issued."""


class ConfigError(KmflError, ValueError):
    """An experiment configuration failed validation."""
