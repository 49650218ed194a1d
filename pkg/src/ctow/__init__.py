"""Semi-supervised co-training of boosted trees and a transductive SVM."""

__version__ = "0.1.0"

from .cotrain import CTOWClassifier, make_estimator, run_cotraining  # noqa: E402
from .data import Dataset, SplitPlan, load_csv, stratified_split  # noqa: E402
from .gbdt import GBDTClassifier  # noqa: E402
from .metrics import accuracy, contingency, cross_validate, rho  # noqa: E402
from .tsvm import TransductiveSVC, margin_density  # noqa: E402
from .weights import prior_weight, project_simplex, solve_weights  # noqa: E402

__all__ = [
    "CTOWClassifier",
    "Dataset",
    "GBDTClassifier",
    "SplitPlan",
    "TransductiveSVC",
    "accuracy",
    "contingency",
    "cross_validate",
    "load_csv",
    "make_estimator",
    "margin_density",
    "prior_weight",
    "project_simplex",
    "rho",
    "run_cotraining",
    "solve_weights",
    "stratified_split",
]
