"""mfclab: numerical laboratory for mean-field control under model uncertainty."""

from .measures import (
    BoundCheck,
    DiscreteMeasure,
    QuadratureRule,
    RandomMeasureEnsemble,
    SQRT_PI,
    distance,
    fourier_transform,
    gauss_hermite_rule,
    inner_product,
    law_distance_bound_check,
    norm_sq,
    trapezoid_rule,
)
from .lawproc import (
    FourierTable,
    ItoLevyCoeffs,
    LevyMeasure,
    MeasurePath,
    abs_continuity_scan,
    empirical_law,
    fourier_table,
    generator_on_test_fn,
    law_derivative_fd,
    loglog_slope,
    m4_norm_bound_check,
    table_norm_sq,
)
from .sde import (
    CoefficientPartials,
    ControlPair,
    ControlledModel,
    Direction,
    InadmissiblePerturbation,
    InfoPattern,
    NoiseBank,
    ParticleBundle,
    PerformanceSpec,
    SimulationError,
    draw_noise,
    evaluate_performance,
    negate_performance,
    performance_samples,
    perturbed_controls,
    simulate,
    simulate_derivative_process,
)
from .bsde import (
    BsdeSolution,
    EstimationError,
    GammaPositivityError,
    LinearBsdeSpec,
    adjoint_p0_solve,
    backward_euler_reference,
    simulate_gamma,
    solve,
)
from .game import (
    AdjointState,
    GameSpec,
    GateauxResult,
    IntervalMass,
    MeasurePairing,
    PerturbationPlan,
    ResidualCurves,
    SweepTable,
    UnsupportedModelError,
    ZeroPairing,
    first_order_residuals,
    gateaux_check,
    hamiltonian,
    nash_perturbation_sweep,
    solve_adjoints,
)
from .consumption import (
    ClosedFormControls,
    ConsumptionModel,
    ConsumptionGameReport,
    TerminalWeight,
    closed_form_controls,
    feedback_pair,
    frozen_pair,
    game_spec,
    product_process_check,
    verify_consumption_game,
)
from .report import CheckResult, VERSION

__version__ = VERSION
