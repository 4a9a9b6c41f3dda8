"""Importance-weighted CART for covariate shift, with a simulation lab."""
from .boost import BoostedClassifier, BoostParams, fit_propensity
from .data import ColumnSchema, Dataset, parse_dataset, write_dataset
from .errors import DacartError, NumericalError, UserError
from .metrics import auc, ks_two_sample, rmse
from .pipeline import (
    BaggedModel,
    DaCartModel,
    VariableSelection,
    fit_bagged,
    fit_da_cart,
    predict_model,
    select_variables,
)
from .tree import FitParams, Tree, fit, grow, predict, prune
from .weights import WeightVector, kliep_weights, propensity_weights, true_weights, unit_weights

__all__ = [
    "BaggedModel",
    "BoostParams",
    "BoostedClassifier",
    "ColumnSchema",
    "DaCartModel",
    "DacartError",
    "Dataset",
    "FitParams",
    "NumericalError",
    "Tree",
    "UserError",
    "VariableSelection",
    "WeightVector",
    "auc",
    "fit",
    "fit_bagged",
    "fit_da_cart",
    "fit_propensity",
    "grow",
    "kliep_weights",
    "ks_two_sample",
    "parse_dataset",
    "predict",
    "predict_model",
    "propensity_weights",
    "prune",
    "rmse",
    "select_variables",
    "true_weights",
    "unit_weights",
    "write_dataset",
]
