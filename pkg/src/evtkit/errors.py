"""Exception hierarchy shared across the toolkit."""


class EvtError(Exception):
    """Base class for toolkit errors."""


class DomainError(EvtError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class InputError(EvtError, ValueError):
    """Malformed or insufficient input data."""


class FitError(EvtError, RuntimeError):
    """A model fit could not be completed."""
