"""Numerical laboratory for Darcy convection in layered porous media.

Implements the sharp-interface (piecewise-constant coefficients) and
diffuse-interface (thin linear transition ramps of half-width eps) models
of buoyancy-driven flow in a horizontally periodic slab, together with:

* finite-volume / Fourier pseudospectral discretization of the
  concentration transport and Darcy pressure problems,
* Sturm-Liouville eigensolves of the diffusion operator per horizontal
  mode, fractional norms and interpolation-norm identities,
* explicit a-priori constants (decay rates, absorbing radii) evaluated
  from the configuration and checked against simulated trajectories,
* eps -> 0 convergence studies: trajectory error rates, attractor-proxy
  semidistances, and Nusselt number statistics.
"""

from .domain import (
    LayerConfig,
    Grid,
    CoefficientField,
    BackgroundProfile,
    build_layer_config,
    build_grid,
    sample_coefficients,
    build_background,
    choose_delta,
)
from .operator import Spectrum, FieldExpansion, apply_L, eigensolve, fractional_norm, kmethod_norm
from .pressure import FlowField, solve_pressure, compute_velocity, check_divergence, pressure_constant_estimate
from .evolve import SimState, TimeSeries, step_imex, cfl_dt, run
from .bounds import BoundLedger, compute_constants, check_decay, check_absorbing, check_integrated_dissipation

__version__ = "0.1.0"
