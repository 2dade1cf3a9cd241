"""Private federated linear regression with cosine-modulated client features."""

from .core import (Dataset, ModelState, OrthonormalSet, ProtocolError, ProtocolParams, RngStream,
                   StepRule, make_orthonormal_set, split, standardize)
from .estimators import ols, one_shot_estimate, r_squared, run_dpsgd, run_one_shot
from .kernels import BACKEND
from .modulation import lipschitz_constant, modulate, privatize
from .privacy import Accountant, AccountingError, PrivacyBudget, clip_features
from .server import run_protocol, run_round

__version__ = "0.1.0"
