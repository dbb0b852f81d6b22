"""truncaug: stationary distributions of Markov chains and jump processes
by truncation-augmentation, with certificate verification and
regenerative split-chain simulation."""

from .errors import (ConfigError, CycleLengthCap, DegenerateDenominator,
                     DimensionMismatch, GeneralModeError, InsufficientCycles,
                     InvalidCert, IterationLimit, KernelValidationError,
                     MinorizationRejected, NegativeResidual, NoStabilization,
                     NonFiniteLevelSet, NumericalError, ParamOutOfRange,
                     ReducibleKernel, ReentryOutsideA1, SingularSystem,
                     StateOutsideTruncation, TruncaugError, UnboundedG,
                     ZeroExitRate)
from .kernel import (KernelSpec, SparseDist, apply_kernel, indicator,
                     kernel_from_table, kernel_row, load_kernel_csv,
                     load_model_json, measure_integral)
from .truncation import (AugmentedKernel, TruncationScheme, augment,
                         exit_mass, explicit_scheme, fixed_state_augment,
                         level_sets_from_g, prefix_scheme,
                         self_loop_completion)
from .solve import (StationaryResult, power_iterate,
                    solve_stationary_elimination, weighted_tv)
from .drift import (ConfinedKernel, DriftCert, GeneralSmallSet, SmallSetCert,
                    check_drift, check_r_regularity, first_passage_cost,
                    m_step_confined_kernel, max_minorization_lambda,
                    split_lambda)
from .regen import (CouplingReport, CycleRecord, JumpCycleRecord,
                    RatioEstimate, coupling_check, m_step_split_step,
                    pi_n_via_ratio_formula, ratio_estimator,
                    residual_distribution, simulate_cycle, simulate_cycles,
                    simulate_mstep_cycles, simulate_truncated_cycle,
                    simulate_truncated_cycles, split_step)
from .ctmc import (RateKernel, check_ctmc_drift, embedded_chain,
                   rate_kernel_from_table, simulate_jump_cycle,
                   simulate_jump_cycles, solve_stationary_ctmc,
                   truncate_rate_kernel)
from .models import (ModelSpec, bad_augmentation_demo, birth_death_ctmc,
                     build_model, continuous_reflected_ar, reflected_walk,
                     unbounded_rate_bd)

__version__ = "0.1.0"
