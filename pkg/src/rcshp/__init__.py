"""Randomized channel-sparsifying hybrid precoding: library and simulator.

Pipeline modules: ``channel`` (covariance synthesis + sampling), ``estimation``
(pilots + LMMSE), ``precoding`` (analog/digital precoders), ``rate_utility``
(rates and network utilities), ``jacobian`` (analytic rate gradients), ``ssca``
(the policy optimizer) and ``harness`` (experiment orchestration + CLI glue).
"""

from .channel import (ChannelSample, ChannelStats, Cost2100ModelParams, GeometryModelParams,
                      SystemDims, build_cost2100_stats, build_geometry_stats, numerical_rank,
                      sample_channels, steering_vector)
from .errors import ConfigurationError, DataError, NumericalError, OptimizerError
from .estimation import (EffectiveChannelEstimate, PilotMatrix, generate_pilots,
                         lmmse_estimate, observe_pilots)
from .harness import (ExperimentConfig, ExperimentRecord, PowerModel, apply_policy,
                      desk_profile, emit_results, energy_efficiency, paper_profile,
                      run_experiment)
from .jacobian import (RateJacobian, finite_difference_jacobian, policy_jacobian,
                       rate_gradient_power, rate_gradient_theta, rate_jacobian_single)
from .precoding import (ControlPolicy, ControlVariable, DigitalPrecoder, analog_from_phases,
                        duality_digital_precoder, rzf_digital_precoder)
from .rate_utility import (UtilitySpec, instantaneous_rates, monte_carlo_average_rates,
                           utility_gradient, utility_value)
from .ssca import (OptimizerTrace, StepSchedule, SurrogateState, average_iterates,
                   initialize_policy, project_simplex, solve_gamma_subproblems,
                   solve_q_subproblem, ssca_optimize, update_gradient_surrogate,
                   update_rate_surrogate)

__version__ = "0.1.0"
