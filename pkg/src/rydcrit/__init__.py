"""Adiabatic preparation and measurement of Ising-critical Rydberg arrays.

Desk-scale toolkit: exact state-vector simulation of driven Rydberg lattices
with decoherence, gap-adaptive ramp synthesis, projective snapshot sampling
with detection errors, and extraction of scaling dimensions and decoherence
lengths from two-point correlators.
"""

__version__ = "0.1.0"

from .analysis import (  # noqa: F401
    BootstrapSummary,
    FitResult,
    KzPoint,
    SmoothingConfig,
    SusceptibilityScan,
    bootstrap,
    fit_correlator,
    joint_fit,
    kz_rate_scan,
    model_value,
    susceptibility_peak,
)
from .config import ExperimentConfig, bundled_config_path, load_config  # noqa: F401
from .errors import (  # noqa: F401
    BasisMismatchError,
    BootstrapUnstableError,
    CapacityError,
    ConfigError,
    ConvergenceError,
    DomainError,
    FitDegenerateError,
    GeometryError,
    IntegrationError,
    RydcritError,
)
from .evolve import (  # noqa: F401
    JumpOperators,
    JumpParams,
    TrajectoryResult,
    UnitaryResult,
    density_from_state,
    evolve_lindblad,
    evolve_trajectory,
    evolve_unitary,
    make_jump_operators,
    trajectory_ensemble,
)
from .hamiltonian import (  # noqa: F401
    BasisSpace,
    HamiltonianSpec,
    RydbergOperator,
    StateVector,
    apply_h,
    apply_h_shifted,
    blockade_radius,
    c6_for_blockade,
    dense_hamiltonian,
    expectation,
)
from .lattice import (  # noqa: F401
    Lattice,
    build_ring,
    build_square,
    chord_distance,
    sample_disorder,
    sample_holes,
)
from .measurement import (  # noqa: F401
    DetectionModel,
    SnapshotSet,
    apply_detection_errors,
    infer_detection_error,
    postselect_blockade,
    sample_ensemble_snapshots,
    sample_snapshots,
)
from .observables import (  # noqa: F401
    CorrelatorSeries,
    occupation_expectations,
    order_parameter,
    rydberg_density,
    two_point,
)
from .pipeline import (  # noqa: F401
    finalize,
    new_run,
    run_analyze,
    run_gap_scan,
    run_kz,
    run_pipeline,
    run_prepare,
    run_ramp,
)
from .ramps import (  # noqa: F401
    RampProfile,
    adiabaticity_series,
    gap_adaptive_ramp,
    linear_gap_ramp,
    linear_ramp,
    min_adiabaticity,
)
from .spectrum import (  # noqa: F401
    GapProfile,
    GapResult,
    gap,
    gap_profile,
    ground_state,
    reachable_gap,
    reachable_gap_profile,
    symmetry_perms,
)
