from .base import (
    BASELINES,
    KINDS,
    ForecastBatch,
    Forecaster,
    ForecasterSpec,
    default_grid,
    forest_of,
    load_model,
    make_forecaster,
    save_model,
    tune,
)
from .baselines import HistoricalMean, LastObservation
from .boosting import GradientBoosting
from .forest import RandomForest, tree_mean, tree_quantiles
from .lmm import LinearMixedModel, VarianceComponents, blup
from .merf import MixedEffectsForest
from .mlp import MLP
from .tree import Tree, fit_tree
