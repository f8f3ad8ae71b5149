"""Decentralized Riemannian optimization on the Stiefel manifold.

Simulates networks of agents that jointly optimize over St(d, r) using only
neighbor gossip: a consensus scheme (drcs), decentralized (stochastic)
Riemannian gradient descent (drsgd / drdgd), and gradient tracking (drgta),
with the decentralized eigenvector problem as the built-in benchmark.
"""

__version__ = "0.1.0"

from .algorithms import (
    ALGORITHMS,
    ConsensusConfig,
    RunResult,
    StepsizeSchedule,
    TrackerState,
    drcs_step,
    drgta_init,
    drgta_max_stepsize,
    drgta_step,
    drgta_theoretical_stepsize,
    drsgd_constant_schedule,
    drsgd_diminishing_schedule,
    drsgd_step,
    run,
    tracking_residual,
)
from .errors import (
    ConfigError,
    ContractError,
    DegenerateMeanError,
    DimensionError,
    IngestionError,
    ParameterError,
    StepsizeError,
    StiefelDecError,
    TopologyError,
)
from .manifold import (
    ConsensusRegionParams,
    RegionCheck,
    StiefelPoint,
    SwarmState,
    TangentVector,
    consensus_error_sq,
    in_consensus_region,
    induced_arithmetic_mean,
    linf_consensus_error,
    perturbed_swarm,
    polar_retract,
    project_to_tangent,
    random_stiefel,
    random_tangent,
    riemannian_gradient,
)
from .metrics import IterationRecord, stationarity_measure, subspace_distance
from .network import (
    ConsensusRateReport,
    Graph,
    MixingMatrix,
    complete_graph,
    consensus_rate_params,
    erdos_renyi,
    matrix_power,
    metropolis_weights,
    min_communication_rounds,
    mix,
    ring_graph,
    spectral_dump,
)
from .problems import (
    EigLocal,
    LocalObjective,
    SmoothnessConstants,
    centralized_oracle,
    eig_egrad,
    eig_value,
    estimate_xi,
    load_dsv_partition,
    quadratic_constants,
    stochastic_egrad,
    synthesize_eigengap_data,
)
