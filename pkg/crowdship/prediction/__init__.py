from .estimators import GaussianEstimator
from .hoeffding_tree import *
from .delay_predictor import *
from .evaluation import *
