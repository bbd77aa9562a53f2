"""Simulation and exact analysis of the Moran model on the sharp peak
fitness landscape: mutation kernels, bounding processes, birth-death
analysis, the limiting quasispecies distribution, and the statistical
harness tying them together.
"""

from .birthdeath import (
    BinomialBounds,
    BirthDeathSpec,
    LDProfile,
    assumption1_report,
    binomial_bounds,
    binomial_log_limit,
    eta_root,
    exit_point_law,
    ld_integral,
    mean_hitting_time_down,
    mean_hitting_time_up,
    phi_ratio,
    phi_ratio_multi,
    pi_products_log,
    rho_root,
)
from .bounding import (
    BoundingChainKind,
    ConditionedRates,
    EKTransitionMatrix,
    FullRecord,
    SingleRecord,
    bd_coupling_map,
    conditioned_rates,
    coupled_bd_bounds,
    coupling_map_C,
    draw_full_record,
    draw_single_record,
    dying_class,
    ek_transition_matrix,
    enumerate_ek,
    lower_step,
    lower_step_single,
    master_class_chain,
    phi_occupancy,
    phi_occupancy_prime,
    phi_occupancy_prime_under,
    phi_occupancy_under,
    sample_ek_path,
    selection_class,
    upper_step,
    write_excursions_csv,
)
from .cli import ExperimentSpec, load_config, main, read_table, run_experiment
from .core import (
    ClassVector,
    OccupancyDistribution,
    Parameters,
    QuasispeciesDistribution,
    partial_order_leq,
    project_lower,
    project_upper,
)
from .errors import (
    CapacityError,
    CensoredError,
    NumericError,
    RegimeError,
    SingularChainError,
    UnreachableTargetError,
    ValidationError,
)
from .harness import (
    EquilibriumEstimate,
    HittingTimeEstimate,
    RenewalDecomposition,
    ek_mean_hitting_times,
    ek_stationary,
    equilibrium_from_samples,
    estimate_discovery_time,
    estimate_equilibrium,
    estimate_occupancy_equilibrium,
    estimate_persistence_time,
    json_record,
    occupancy_stationary,
    occupancy_transition_matrix,
    renewal_decomposition,
    uk_window_states,
    write_json_record,
)
from .kernels import (
    LumpedMutationMatrix,
    ModifiedMutationMatrix,
    dump_matrix_csv,
    limit_mutation_prob,
    lumped_mutation_matrix,
    modified_mutation_matrix,
    per_locus_class_mutation,
    sample_class_mutation,
    sequence_mutation_prob,
)
from .quasispecies import (
    PhasePoint,
    Regime,
    classify_phase,
    generating_function,
    phi_threshold,
    q_moments,
    quasispecies_distribution,
    rho_star_closed,
    rho_star_recurrence,
)
from .simulate import (
    Population,
    SimulationConfig,
    TrajectoryResult,
    n_k_statistic,
    moran_step_full,
    occupancy_step,
    replica_generators,
    run_trajectory,
    write_trajectory_csv,
)

__version__ = "0.1.0"
