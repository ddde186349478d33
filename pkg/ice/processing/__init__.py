"""
Processing package initialization

Estimator modules import the scenario documents from ice.app, so only the
exception types are re-exported here.
"""

from ice.processing.exceptions import ConfigurationError, IceError, NumericalError

__all__ = [
    "IceError",
    "ConfigurationError",
    "NumericalError",
]
