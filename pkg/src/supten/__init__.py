"""Supervised tensor embedding (STE) and regression (STR) for 3-way sensor data."""

from .baselines import NplsModel, PlsModel, npls_fit, npls_predict, pls1_fit, pls1_predict, pls_fit_tensor
from .decomp import CpModel, SteModel, cp_als, feature_importance, select_top_k, ste_fit, ste_project
from .linalg import SingularPair, leading_singular_pair, solve_ridge
from .metrics import pearson, r2_score, rmse, spearman
from .pipeline import (
    CvPlan,
    EvalReport,
    MethodSpec,
    StrPipeline,
    make_plan,
    mesh_evaluate,
    nested_cv,
    str_fit,
    str_predict,
)
from .regress import Regressor, RegressorSpec, fit_regressor
from .synth import SynthSpec, generate
from .tensor import (
    Preprocess,
    PreprocessStats,
    Tensor3,
    center_and_scale,
    impute_mean,
    mode1_vector_product,
    mode23_contract,
    rank1_subtract,
    refold_mode1,
    unfold_mode1,
)

__version__ = "0.1.0"

__all__ = [
    "CpModel",
    "CvPlan",
    "EvalReport",
    "MethodSpec",
    "NplsModel",
    "PlsModel",
    "Preprocess",
    "PreprocessStats",
    "Regressor",
    "RegressorSpec",
    "SingularPair",
    "SteModel",
    "StrPipeline",
    "SynthSpec",
    "Tensor3",
    "center_and_scale",
    "cp_als",
    "feature_importance",
    "fit_regressor",
    "generate",
    "impute_mean",
    "leading_singular_pair",
    "make_plan",
    "mesh_evaluate",
    "mode1_vector_product",
    "mode23_contract",
    "nested_cv",
    "npls_fit",
    "npls_predict",
    "pearson",
    "pls1_fit",
    "pls1_predict",
    "pls_fit_tensor",
    "r2_score",
    "rank1_subtract",
    "refold_mode1",
    "rmse",
    "select_top_k",
    "solve_ridge",
    "spearman",
    "ste_fit",
    "ste_project",
    "str_fit",
    "str_predict",
    "unfold_mode1",
]
