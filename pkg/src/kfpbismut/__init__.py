"""Bismut derivative formulas and Harnack inequalities for degenerate diffusions."""
from .bounds import (BoundConstants, BoundReport, GridSpec, check_entropy_gradient,
                     check_gradient_bound, check_harnack, check_log_harnack, lyapunov_check, phi,
                     psi, tilde_w_check)
from .controls import ControlPair, bismut_weight, cubic_controls, theta, zhang_weight
from .estimators import (Estimate, McConfig, estimate_gradient_bismut, estimate_gradient_fd,
                         estimate_semigroup, ou_exact_gradient, ou_exact_value)
from .girsanov import density, estimate_density_mean, log_harnack_entropy, shifted_expectation
from .integrate import BrownianPath, ExplosionError, PathGrid, Trajectory, simulate, simulate_coupled
from .model import (Direction, State, SystemSpec, cubic_example, kinetic_fokker_planck,
                    linear_ou, linear_system, power_potential, exp_potential)

__version__ = "0.1.0"
