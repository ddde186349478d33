"""
Exception hierarchy shared by the processing and harness layers
"""


class IceError(Exception):
    """Base class for all errors raised by the ice package"""


class ConfigurationError(IceError, ValueError):
    """Invalid scenario, estimator or document configuration"""


class NumericalError(IceError, ArithmeticError):
    """A factorization, quadrature or training step failed numerically"""
