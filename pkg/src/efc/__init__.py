"""Energy-based flow classifier.

Learns an inverse Potts model (pairwise couplings and local fields) from
benign network flows and flags flows whose energy reaches a cutoff taken
from the training energy distribution.
"""

from efc.classifier import Verdict, classify, classify_batch, energies, energy
from efc.discretizer import FeatureRule, FeatureSchema, encode_dataset, encode_flow, fit_schema
from efc.errors import (
    DataError,
    EfcError,
    ModelFormatError,
    NonpositiveFrequency,
    SchemaMismatch,
    SingleClassError,
    SingularCovariance,
    TooFewFlows,
)
from efc.metrics import EvalReport, confusion, evaluate, f1, roc_auc
from efc.model import EfcModel, fit

__version__ = "0.1.0"

__all__ = [
    "DataError",
    "EfcError",
    "EfcModel",
    "EvalReport",
    "FeatureRule",
    "FeatureSchema",
    "ModelFormatError",
    "NonpositiveFrequency",
    "SchemaMismatch",
    "SingleClassError",
    "SingularCovariance",
    "TooFewFlows",
    "Verdict",
    "classify",
    "classify_batch",
    "confusion",
    "encode_dataset",
    "encode_flow",
    "energies",
    "energy",
    "evaluate",
    "f1",
    "fit",
    "fit_schema",
    "roc_auc",
]
