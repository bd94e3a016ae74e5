"""Self-organizing maps and the distortion measure in one and several dimensions."""
from .errors import (
    CollapseError,
    ConvergenceError,
    DeadUnitError,
    DomainError,
    NonDifferentiableError,
    NumericalFailure,
)
from .geometry import (
    Codebook,
    Dataset,
    Density,
    IndexSet,
    NeighborhoodFunction,
    PiecewiseConstant1D,
    assign_winner,
    in_separated_set,
    mediator_midpoints_1d,
    min_separation,
    neighborhood_value,
    voronoi_partition,
    winners,
)
from .distortion import (
    DistortionValue,
    GradientVector,
    Quadrature,
    SortedSample,
    empirical_distortion,
    empirical_distortion_1d_many,
    local_cost,
    local_costs,
    som_equilibrium_residual,
    theoretical_distortion,
    theoretical_gradient_1d,
    theoretical_gradient_fd,
)
from .som import (
    EquilibriumReport,
    LearningRate,
    MinimizerReport,
    TrainingSchedule,
    batch_som_step,
    minimize_theoretical,
    online_som_step,
    solve_equilibrium,
    train_online,
)
from .analysis import (
    TIE_TOL,
    AlmostMinimizerSet,
    ConsistencyRow,
    JumpSummary,
    PerturbationEstimate,
    ScanResult,
    SurfaceSlice,
    almost_minimizers,
    consistency_experiment,
    detect_jumps,
    discontinuity_report,
    exhaustive_scan_1d,
    cell_change_bound,
    lln_gaps,
    lln_probe,
    midpoint_crossings,
    perturbation_measure_mc,
    random_probes,
    sample_dataset,
    slice_jump_summary,
    surface_slice,
)

__version__ = "0.1.0"
