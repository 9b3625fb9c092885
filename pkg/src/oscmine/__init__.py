"""Mining reliable oscillatory components across a spatial-filter hyperparameter sweep."""

__version__ = "0.1.0"
