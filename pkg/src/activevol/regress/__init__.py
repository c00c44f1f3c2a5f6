"""Regression learners behind a single train/predict interface."""

from .base import REGISTRY, Estimator, derive_seed
from .bayes import BinnedGaussianNB, fit_gnb_binned
from .boosting import AdaBoostR2, GradientBoosting, fit_adaboost_r2, fit_gbrt, weighted_median
from .ensemble import Stacking, Voting
from .factory import NEEDS_SCALING, Scaled, build_estimator
from .linear import OLS, BaseModelCoefficient, Lasso, NaiveBase, fit_naive_base, ols_fit
from .model import FAMILIES, SchemaMismatch, TrainedModel, fit_stacking, fit_voting, train
from .neural import MLP, fit_mlp, loss_and_grad
from .svr import LinearSVR, fit_linear_svr
from .trees import DecisionTree, RandomForest, fit_cart, fit_random_forest

__all__ = [
    "REGISTRY", "Estimator", "derive_seed", "BinnedGaussianNB", "fit_gnb_binned", "AdaBoostR2",
    "GradientBoosting", "fit_adaboost_r2", "fit_gbrt", "weighted_median", "Stacking", "Voting",
    "NEEDS_SCALING", "Scaled", "build_estimator", "OLS", "BaseModelCoefficient", "Lasso", "NaiveBase",
    "fit_naive_base", "ols_fit", "FAMILIES", "SchemaMismatch", "TrainedModel", "fit_stacking", "fit_voting",
    "train", "MLP", "fit_mlp", "loss_and_grad", "LinearSVR", "fit_linear_svr", "DecisionTree", "RandomForest",
    "fit_cart", "fit_random_forest",
]
