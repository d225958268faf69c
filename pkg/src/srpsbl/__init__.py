"""Multi-source localization with steered response power and sparse Bayesian learning."""

__version__ = "0.1.0"
