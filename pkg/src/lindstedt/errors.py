"""Exception hierarchy shared by every module of the package."""


class LindstedtError(Exception):
    """Base class for all package errors."""


class ConfigError(LindstedtError):
    """Malformed model file or run configuration."""


class HypothesisError(LindstedtError):
    """The model violates a structural hypothesis (stationarity, spectrum)."""


class EnumerationLimitError(LindstedtError):
    """A truncation order exceeds the configured safety limit."""


class ExcludedEpsilonError(LindstedtError):
    """The perturbation parameter sits in an excluded (resonant) set.

    Attributes
    ----------
    witness : dict or None
        Description of the violated condition, when known.
    """

    def __init__(self, message, witness=None):
        super().__init__(message)
        self.witness = witness


class LadderError(LindstedtError):
    """Inconsistent state of the self-energy ladder."""


class CertificateError(LindstedtError):
    """A numerical certificate failed."""
