"""Submarket-aware additive models for property valuation.

Modules
-------
ingest
    Listing parsing, text mining, projection and area labelling.
basis, design, fit, model
    Spline / spatial bases, design assembly, penalized fitting with GCV
    smoothing-parameter selection, prediction and term extraction.
forest
    Random-forest baseline.
evaluate
    Accuracy metrics, Moran's I and k-fold cross-validation.
synth
    Synthetic data with known ground truth.
cli
    The ``propval`` command.
"""
__version__ = "0.1.0"

from .design import ModelSpec
from .model import FittedModel, fit_model, load_model, predict, save_model
from .records import PropertyRecord, read_records, write_records

__all__ = [
    "ModelSpec", "FittedModel", "fit_model", "predict", "save_model", "load_model",
    "PropertyRecord", "read_records", "write_records", "__version__",
]
