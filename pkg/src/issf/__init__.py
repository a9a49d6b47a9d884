"""Numerical certification and simulation toolkit for safety of
control-affine systems under bounded disturbances.

The package is organized in layers: comparison functions and geometry at
the bottom; scalar-field certification checks, dynamics, and the
compact-support merge in the middle; gain construction, trajectory-level
inequality evaluation, and the experiment pipeline on top.
"""

from ._version import __version__
from .errors import (
    ToolkitError,
    DomainError,
    RangeError,
    FiniteEscapeError,
    GradientMismatchError,
    UnsupportedShapeError,
    SchemaError,
)
from .comparison import (
    MonotoneFn,
    KKFn,
    KLFn,
    identity,
    linear,
    power,
    poly_odd,
    quad_coeffs,
    compose,
    invert,
    comparison_flow,
    comparison_flow_curve,
    is_class_k,
    is_class_kinf,
)
from .geometry import (
    Region,
    SafetyGeometry,
    disk,
    ball,
    disk_union,
    ball_complement,
    distance_to_set,
    contains,
    boundary_extremes,
)
from .expressions import parse_expression, field_from_expression
from .certification import (
    ScalarField,
    GridSpec,
    CertificateReport,
    input_sweep,
    check_iss_lyapunov,
    check_barrier_certificate,
    check_strict_barrier,
    check_robust_barrier,
    check_issf_barrier,
    check_merged_w,
    fit_envelope,
    fit_iss_envelopes,
    fit_issf_envelopes,
    fit_merged_envelopes,
)
from .dynamics import (
    ControlAffineSystem,
    FeedbackLaw,
    Trajectory,
    planar_integrator,
    zero_signal,
    constant_signal,
    sinusoid_signal,
    seeded_noise_signal,
    sample_disturbance,
    integrate,
    integrate_batch,
)
from .merging import (
    CompactBarrier,
    MergedFunction,
    compact_support_transform,
    merged_W,
    gradient_control,
    stationary_points,
    write_grid_csv,
)
from .bounds import (
    ISSfGainBundle,
    build_gains,
    evaluate_issf_inequality,
    admissibility_check,
    safety_envelope,
    build_iss_gains,
    admissibility_witness,
)
from .config import (
    ExperimentSpec,
    spec_from_dict,
    load_spec,
    spec_hash,
    bundled_spec,
    list_bundled,
)
from .pipeline import RunManifest, run_experiment, reproduce_paper, derive_locality
