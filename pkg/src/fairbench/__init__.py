"""Group-fairness metrics, debiasers and a paired cross-validation benchmark."""

__version__ = "0.1.0"
