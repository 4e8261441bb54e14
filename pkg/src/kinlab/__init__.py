"""Simulation and analysis of the label-switching kinetic equation

    d rho/dt = div(rho grad_x f(x, s)) + K (rho_bar x mu - rho)

by particles (PDMP), finite volumes, stationary eigenproblems, exact W2
transport and closed-form bound evaluators.
"""
from .errors import *  # noqa: F401,F403
from .model import (InitialLaw, KSchedule, LabelSpace, Potential, ProblemSpec,
                    argmin_mean_potential, estimate_lipschitz, estimate_sigma2,
                    mean_potential, mean_potential_gradient)
from .particles import Ensemble, TrajectoryRecord, simulate
from .pde import Grid1D, GridDensity, solve
from .transport import DiscreteMeasure, w2_discrete, w2_grid, w2_product

__version__ = "0.1.0"
