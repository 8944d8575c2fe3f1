"""Optimal threshold control of an SIR epidemic with behavioural feedback."""

from .controller import (FillingTheBoxRun, ValueQuery, VPartials, mu, run_filling_the_box,
                         v_partials, value_function)
from .dynamics import (ControlSignal, IntegratorConfig, Trajectory, cost_J, simulate,
                       simulate_backward, step)
from .estimator import FillingTheBoxController
from .exceptions import *  # noqa: F401,F403
from .geometry import (GeometryCache, RegionLabel, build_geometry, classify,
                       compute_separatrix, compute_tilde_y, h_partials,
                       hitting_abscissa_h, kappa)
from .rates import (ModelInstance, RateModel, check_assumption1, check_rmax_condition,
                    constant, counterexample_model, fig1_model, fig2_model,
                    linear_damped, model_from_spec, reproduction_number, rho,
                    saturating)
from .state import EpidemicState

__version__ = "0.1.0"
