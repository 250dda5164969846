"""Average consensus on directed networks with noisy links.

Building blocks: directed graphs with column-stochastic weights (graph),
decaying weight sequences (schedules), replayable link noise (noise), the
round-based protocols (protocol), matrix-analytic diagnostics (analysis)
and the experiment harness with named presets (harness).
"""

from .graph import (
    DirectedNetwork,
    GraphGenerationError,
    WeightMatrix,
    check_strong_connectivity,
    equal_neighbor_weights,
    generate_erdos_renyi,
    split_weight_matrix,
    weight_matrix_from_array,
)
from .schedules import (
    BetaSchedule,
    ConstantThenPowerTheta,
    GeometricTheta,
    ThetaFamily,
    ThetaSchedule,
    dominance_margin,
    implied_band_mu,
    make_beta,
    make_theta_constant_then_power,
    make_theta_family,
    make_theta_geometric,
    theta_zero_for_band,
)
from .noise import NoiseModel, RoundNoise, RoundSampler, effective_delta, sample_round
from .protocol import (
    ProblemInstance,
    ProtocolInvariantError,
    RunTrace,
    SimulationState,
    consensus_error,
    initial_state,
    make_instance,
    nrps_alpha,
    nrps_round,
    pushsum_round,
    run,
)
from .analysis import (
    ConvergenceDiagnostics,
    CsiaReport,
    check_csia,
    closed_form_state,
    compact_recursion_states,
    contraction,
    fit_geometric_rate,
    fit_log_linear,
    mixing_matrix,
    product_matrix,
    theorem3_bound,
    theorem4_band,
)

__version__ = "0.1.0"
