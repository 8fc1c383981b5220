"""Nonparametric sensitivity analysis for unobserved confounding with
right-censored time-to-event outcomes."""
from .data import (CsvSchema, DataError, Dataset, FoldAssignment, Observation, load_csv, load_demo, make_folds,
                   write_csv)

__version__ = "0.1.0"

__all__ = ["CsvSchema", "DataError", "Dataset", "FoldAssignment", "Observation", "load_csv", "load_demo",
           "make_folds", "write_csv", "__version__"]
