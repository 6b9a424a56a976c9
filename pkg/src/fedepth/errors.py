"""Exception taxonomy shared across the package."""


class FedepthError(Exception):
    """Base class for all package errors."""


class ShapeError(FedepthError):
    """Tensor or graph shapes do not compose."""


class NumericError(FedepthError):
    """A computation produced non-finite values."""


class UsageError(FedepthError):
    """An operation was called with arguments that violate its contract."""


class BudgetError(FedepthError):
    """A memory budget cannot accommodate the requested training plan."""


class SpillError(FedepthError):
    """Reading or writing a spilled activation record failed."""


class IntegrityError(SpillError):
    """A spill record is corrupted or does not match its header."""


class ConfigError(FedepthError):
    """An experiment configuration is invalid; the message names the key."""
