"""Small-signal stability and interaction analysis of VSC-HVDC grids.

Pipeline: parse -> validate -> operating point -> linearize -> modal /
sensitivity / sweep, cross-validated by a nonlinear averaged time-domain
simulator.  See the ``hvdcgrid`` CLI for the command-line surface.
"""

from importlib import resources

__version__ = "0.1.0"

from .config import (GridSpec, TerminalSpec, CableSpec, ControllerGains,
                     MeasurementFilters, parse_grid_spec, load_grid_spec,
                     validate_spec, scr_to_impedance)
from .steady_state import (solve_dc_power_flow, solve_terminal_steady_state,
                           assemble_operating_point, solve_operating_point,
                           OperatingPoint)
from .dynamics import nonlinear_residual, residual_inf_norm_pu
from .linearize import (linearize, LinearModel, numeric_jacobian,
                        build_terminal_block, build_dc_network_block, augment)


def data_path(name):
    """Path to a shipped example config or events file."""
    return resources.files("hvdcgrid").joinpath("data", name)
