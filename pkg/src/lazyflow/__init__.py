"""Lazy-training dynamics: scaled models, tangent kernels, gradient flows
and the diagnostics that certify when a non-linear model trains like its
linearization."""

from .model import (
    RELU,
    Activation,
    CenteredModel,
    DimensionError,
    EvaluationSet,
    FeatureModel,
    JacobianTooLargeError,
    ScaledModel,
    SymmetrizedModel,
    TwoLayerNet,
    rescale_init,
    softplus,
    unwrap_two_layer,
)
from .loss import (
    QuadraticLoss,
    SquareLoss,
    scaled_loss_gradient,
    scaled_loss_value,
    scaled_loss_value_and_gradient,
)
from .linearize import (
    SpectrumResult,
    TangentModel,
    kernel_spectrum,
    linearize_at,
    operator_norm,
    spectrum_of_model,
    tangent_kernel,
)
from .flow import (
    FlowConfig,
    FlowDivergence,
    Trajectory,
    integrate_flow,
    integrate_kernel_flow,
    integrate_linearized_flow,
    run_sgd,
)
from .diagnostics import (
    BoundCheck,
    CriticalInitializationError,
    DeviationReport,
    FlowDeviation,
    NormEstimates,
    check_finite_horizon_bound,
    check_kernel_stability_bound,
    check_overparam_decay,
    compare_flows,
    deviation_report,
    estimate_norms,
    fit_loglog_slope,
    generalization_gap,
    inverse_relative_scale,
    regime_plateau_gap,
    stability_of_activations,
    strongly_convex_decay_envelope,
    tangent_feature_constants,
    tangent_least_squares,
)
from .kernels import (
    ArcCosineKernel,
    angle_between,
    kernel_section,
    limit_kernel,
    random_kernel,
    random_kernel_grid,
    sphere_section,
)
from .experiments import (
    ConfigError,
    TeacherSpec,
    build_student,
    export_neuron_cloud,
    make_teacher,
    run_single,
    run_sweep,
    run_teacher_student,
    sample_sphere,
    sweep_width,
    teacher_sampler,
    validate_config,
)

__version__ = "0.1.0"
