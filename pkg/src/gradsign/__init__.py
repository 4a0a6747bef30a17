"""Training-free model performance inference from per-sample gradient signs."""

__version__ = "0.1.0"
