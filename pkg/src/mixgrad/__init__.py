"""Pathwise gradient estimation through diagonal mixture densities."""

from .errors import (
    AccuracyFailureError, DegenerateRateError, DegenerateSampleError, InvalidInputError,
    InvalidLossError, LowAcceptanceError, MixgradError, NumericFailureError,
)
from .generic_grad import (
    ParameterSelector, PartialIntegralEstimate, estimate_loss_grad, estimate_loss_grad_nested,
    expand_params, mc_partial_integral, pathwise_dx_dtheta_exact, pathwise_jacobian,
    reparam_component_grads,
)
from .losses import make_loss
from .mixture import (
    ForwardTrace, MixtureModel, component_eval, joint_pdf, load_model, model_from_dict,
    model_to_dict, normalize_weights, responsibilities_forward, softmax_backward,
)
from .reports import EstimatorReport
from .sampling import (
    TruncatedSampleBatch, UniformDraw, conditional_cdf, make_rng, sample_ancestral,
    sample_quantile_transform, sample_truncated,
)
from .verify import (
    ComparisonReport, OracleValue, compare, fd_pathwise, quadrature_expectation,
    quadrature_fd_grad, score_function_grad,
)
from .weight_grad import (
    WeightGradient, estimate_weight_grad, per_sample_weight_grad, weight_grad_init,
    weight_grad_step, weight_grad_trace,
)

__version__ = "0.1.0"
