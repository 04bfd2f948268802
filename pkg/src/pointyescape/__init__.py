"""Small-noise escape of a diffusion from a cusp-type singular point.

Potentials V(x) = g(x/|x|)|x|^(1+alpha) (+ h(x/|x|)|x|^(1+beta)) with
Hoelder-continuous gradient at the origin, the angular gradient flow on the
sphere, Euler-Maruyama paths of dX = grad V(X) dt + eps dB with their
stopping times, and ensemble statistics over a ladder of noise levels.
"""
from .assumptions import Grid, ValidationReport, boundary_laplacian_scan, check_assumption_A, check_assumption_B, validate
from .errors import (ConfigError, DegenerateProfile, DimensionError, DomainError, EmptyRange, FitFailure,
                     MissingInput, NumericalBlowup, PointyError, UncheckedWarning)
from .montecarlo import (EnsembleStats, compute_psi, fit_escape_constant, infinitesimal_time, run_ensemble,
                         t_star)
from .potential import (AngularProfile, PotentialModel, Profile2D, available_profiles, bump_profile, eval_V,
                        grad_sphere_theta, grad_V, hess_sphere_theta, hessian_V, laplacian_V, make_profile,
                        parse_profile_text, theta_value)
from .sde import PathRecord, SimConfig, StoppingTimes, compare_angle_flow, detect_failed_exit, simulate_path
from .sphereflow import CriticalSets, attraction_time, find_critical_sets, integrate_flow

__version__ = "0.1.0"
