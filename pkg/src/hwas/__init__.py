"""Heat-wide association study: quasi-Poisson screening of diagnosis counts
followed by case-crossover distributed lag non-linear models."""

__version__ = "0.1.0"

from .config import Inputs, RunConfig
from .errors import HWASError, InputValidationError
from .glmfit import QuasiPoissonRegressor, fit_quasipoisson
from .clogitfit import ConditionalLogisticRegression, fit_clogit
from .dlnm import CrossBasis, predict_or
from .screening import bh_adjust, screen
from .crossover import VARIANTS, run_sensitivity, run_stage2, run_stratified
from .pipeline import run_pipeline, validate_bundle
from .synth import SynthScenario, simulate

__all__ = [
    "Inputs", "RunConfig", "HWASError", "InputValidationError", "QuasiPoissonRegressor", "fit_quasipoisson",
    "ConditionalLogisticRegression", "fit_clogit", "CrossBasis", "predict_or", "bh_adjust", "screen",
    "VARIANTS", "run_sensitivity", "run_stage2", "run_stratified", "run_pipeline", "validate_bundle",
    "SynthScenario", "simulate",
]
