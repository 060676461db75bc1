"""Distribution-free prediction intervals and sets for ordinal classification."""

from .classifier import FitConfig, FittedClassifier, fit, posterior, score
from .datagen import (
    DataError,
    Dataset,
    SplitSpec,
    gen_gaussian_mixture,
    gen_sparse_model,
    read_csv,
    split,
    write_csv,
)
from .evaluation import EvalReport, ExperimentConfig, evaluate, run_experiment
from .multiplicity import AcceptanceSet, procedure1_accept, procedure2_accept, procedure3_accept
from .pvalues import (
    CalibrationScores,
    PValueVector,
    conditional_pvalue,
    marginal_pvalue,
    pvalue_matrix,
    pvalue_vector,
)
from .regions import PredictionRegion, ordinal_prediction_interval, ordinal_prediction_set

__version__ = "0.1.0"
