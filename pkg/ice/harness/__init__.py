"""
Evaluation harness: estimator registry, curves, verification suite and datasets
"""
