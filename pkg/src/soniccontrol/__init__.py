"""Boundary-control synthesis for 1-D quasilinear hyperbolic systems
whose m-th characteristic speed vanishes at the target equilibrium.

The library builds, end to end, a classical solution steering given
initial data to given final data near such an equilibrium: it certifies
finite-dimensional controllability of the eigenvector-field ODE, plans
a zigzag of rarefaction flows, realizes it as a piecewise simple-wave
trajectory, and glues perturbed grid solutions (forward, sideways
matched, backward) whose boundary traces are the realized controls.
"""

from . import core, models, reachability, waves, solver, pipeline
from .core import DomainBox, Spectral, SystemDef, eigendecompose, eigvec_jacobian, grad_lambda, lie_bracket
from .models import Euler, Isentropic, SaintVenant, Traffic, analytic_h1_value, build_model

__version__ = "0.1.0"
