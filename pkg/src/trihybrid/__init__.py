"""Multi-user MIMO precoding with reconfigurable per-antenna radiation patterns."""

from .baselines import bd_zero_forcing, fixed_pattern_wmmse, interference_leakage
from .channel import (
    ArrayLayout,
    EffectiveChannel,
    PathGeometry,
    Scenario,
    ScenarioConfig,
    assemble_channel,
    compose,
    compose_selection,
    far_field_channel,
    generate_scenario,
    selection_effective_channel,
    synthesis_effective_channel,
    upa_layout,
    upa_response,
)
from .decomp import DecompositionResult, decompose_precoder, rescale_per_antenna
from .metrics import ConstraintReport, array_beampattern, audit_constraints, azimuth_envelope
from .patterns import (
    CandidateSet,
    RadiationPattern,
    gaussian_beam,
    gaussian_beam_grid,
    harmonic_pattern,
    isotropic_pattern,
    normalize_pattern,
)
from .sphere_opt import (
    SolverOptions,
    SphereProblem,
    SphereResult,
    minimize_on_sphere,
    reduced_coefficient_problem,
    retract,
    tangent_gradient,
)
from .sphharm import (
    FOUR_PI,
    SHCoefficients,
    SHIndex,
    SphereGrid,
    assoc_legendre,
    decompose_gain,
    default_grid,
    pattern_energy,
    real_sph_harm,
    sh_basis,
    sphere_grid,
    synthesize_gain,
)
from .wmmse import (
    PerAntennaTerms,
    PrecoderState,
    SolverConfig,
    Trace,
    mmse_receivers,
    mse_matrix,
    mse_weights,
    per_antenna_terms,
    run_selection,
    run_synthesis,
    select_pattern_and_row,
    solve_antenna_row,
    synthesize_pattern_and_row,
    weighted_sum_rate,
    wmmse_objective,
)

__version__ = "0.1.0"
