"""
In-context estimation of transmitted symbols over simulated SIMO channels
"""

__version__ = "1.0.0"
