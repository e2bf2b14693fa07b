"""Wasserstein-robust logistic regression for mixed numerical and categorical features."""
from .calibration import AmbiguityParams, CertaintySpec, PerturbationModel, calibrate
from .dataset import DatasetSchema, EncodedDataset, encode, load_csv, preprocess, split
from .model import Coefficients, distance, log_loss, predict_proba
from .solve import TrainReport, train

__version__ = "0.1.0"

__all__ = [
    "AmbiguityParams", "CertaintySpec", "PerturbationModel", "calibrate",
    "DatasetSchema", "EncodedDataset", "encode", "load_csv", "preprocess", "split",
    "Coefficients", "distance", "log_loss", "predict_proba", "TrainReport", "train",
]
