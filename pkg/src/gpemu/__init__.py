"""GP emulation of expensive computer models with default Bayesian priors.

The package provides stationary correlation kernels, marginal-likelihood and
posterior-mode estimation of range parameters under reference or
jointly-robust priors, closed-form Student-t prediction, a shared-correlation
multi-output emulator, and Bayesian calibration of computer models against
field data with a GP discrepancy.
"""

__version__ = "0.1.0"

from .calibration import (
    CalibrationPrediction,
    CalibrationProblem,
    McmcChain,
    McmcConfig,
    SimulatorHandle,
    calib_log_posterior,
    calib_predict,
    calibrate,
    ess_batch_means,
)
from .core import (
    GlsState,
    GpModel,
    TrendBasis,
    build_gp_model,
    cholesky_with_jitter,
    gls_solve,
    grad_log_marginal_likelihood,
    log_full_likelihood,
    log_marginal_likelihood,
)
from .errors import (
    CalibrationError,
    ConditioningError,
    FitError,
    GpemuError,
    NumericalError,
    PriorError,
    ValidationError,
)
from .estimation import (
    FitConfig,
    FitReport,
    detect_inert_inputs,
    fit_gp,
)
from .estimators import BayesianCalibrator, GpEmulator, MultiOutputGpEmulator
from .kernels import (
    CorrelationFamily,
    CorrelationMatrix,
    KernelSpec,
    build_correlation,
    build_correlation_grads,
    cross_correlation,
    eval_correlation,
    eval_correlation_grad,
)
from .multioutput import (
    MultiOutputGpModel,
    build_multi_gp_model,
    fit_multi_gp,
    predict_multi,
    predict_multi_batch,
)
from .prediction import (
    PredictiveT,
    predict,
    predict_arrays,
    predict_batch,
    predictive_interval,
)
from .priors import (
    FisherInfo,
    PriorSpec,
    default_jr_weights,
    fisher_info,
    grad_log_jr_prior,
    log_jr_prior,
    log_prior,
    log_reference_prior,
    materialize_prior,
)
from .serialize import load_model, model_from_dict, model_to_dict, save_model

__all__ = [name for name in dir() if not name.startswith("_")]
