"""etatest: stability verification for control systems that are described
only by finite (state, action, state-derivative) datasets.

Pipeline: collect or load a dataset, fit local rate constants at every sample
(two-variable QP), restrict the unknown closed-loop derivative at each state
to an intersection of data-induced balls, optimize the Lyapunov directional
derivative over that set, and classify the system from the signs.
"""

from .dataset import (ConflictingDataError, Dataset, DatasetError, DatasetMeta,
                      NeighborIndex, Sample, TimeKind, collect, load, neighbors,
                      save)
from .linear import (Definiteness, DissipationReport, LinearData,
                     RankDeficientError, autonomous_spectral,
                     continuous_dissipation, discrete_dissipation,
                     right_inverse)
from .lipschitz import (LipschitzField, LocalEstimate, estimate_all,
                        estimate_local, load_field, save_field, solve_rate_qp)
from .qclp import (Ball, QclpResult, QclpStatus, ball_quadratic_max,
                   dump_instance, max_linear, max_quadratic_bound, min_linear)
from .systems import (CareError, Experiment, LyapunovFn, PendulumParams,
                      Policy, SystemSpec, VehicleParams, care_solve,
                      linear_feedback, make_experiment, oscillator_damping,
                      oscillator_dynamics, pendulum_damping, pendulum_dynamics,
                      pendulum_energy_lyapunov, pendulum_top_hold,
                      quadratic_lyapunov, vehicle_matrices, zero_policy)
from .verify import (Mode, PointReport, Verdict, VerdictKind, classify,
                     eta_test, eta_test_discrete, radius, true_vdot_oracle)

__version__ = "0.1.0"
