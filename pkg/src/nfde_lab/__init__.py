"""Numerical laboratory for neutral compartmental delay systems driven by
quasi-periodic torus rotations: a stable time-varying difference operator
with a Neumann-series inverse, exponential-order cones, closed-form
monotonicity condition checkers, and a fixed-step integrator for the
transformed equation."""

from .base_flow import (
    GOLDEN_FREQ,
    TorusFlow,
    TorusPoint,
    TrigPoly,
    advance,
    advance_many,
    derivative_along_flow,
    eval_trig,
    torus_distance,
)
from .compartment import (
    CompartmentalSystem,
    NeutralDiagSystem,
    PipeSpec,
    ShapeFn,
    TransportSpec,
    c_product,
    check_condition,
    eval_F,
    eval_G,
    lipschitz_bounds,
    mass_balance_residual,
    pq_sequence,
    suggest_a,
    total_mass,
)
from .d_operator import (
    AtomicMeasureFamily,
    DOperatorSpec,
    MeasureAtom,
    MeasureDensity,
    SamplingConfig,
    StabilityEstimate,
    check_monotone_structure,
    dstar_eval,
    eval_D,
    eval_Dhat_segment,
    extract_atom_at_zero,
    invert_Dhat,
    stability_margin,
)
from .errors import (
    ConfigError,
    DimensionMismatchError,
    DivergenceError,
    HorizonError,
    NfdeError,
    NoReturnTimesError,
    SingularBError,
    StructuralPreconditionError,
    UnorderedPairError,
    UnstableMarginError,
)
from .history import (
    FunctionHistory,
    HistoryGrid,
    SegmentView,
    TailPolicy,
    compact_open_metric,
    constant_history,
    export_csv,
    from_function,
    import_csv,
    resample,
    seminorm_n,
    shift_append,
    sup_norm,
)
from .integrator import (
    PairLog,
    SimConfig,
    SimState,
    TrajectoryLog,
    covering_diagnostic,
    init_from_z,
    reconstruct_z,
    required_z_horizon,
    run,
    run_ordered_pair,
    step,
)
from .ordering import (
    ComparisonUpper,
    ConeSpec,
    OrderReport,
    cone_membership,
    is_quasipositive,
    make_comparison_upper,
    matrix_exp,
    transformed_cone_membership,
)

__version__ = "0.1.0"
