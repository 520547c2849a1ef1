"""Nonlinear averaged model: residual evaluation and per-unit norms."""

from __future__ import annotations

import numpy as np

from . import _kernels
from .errors import SingularityError
from .indexing import (N_TERM_STATES, X5, apply_inputs, build_arrays,
                       default_inputs)


def nonlinear_residual(spec, x, u=None, arrays=None):
    """Full state derivative dx/dt (SI units) of the averaged model.

    ``u`` is the setpoint vector (P_ref, V_dc_ref, Q_ref per terminal, SI);
    when omitted the spec's own setpoints apply.
    """
    arr = arrays if arrays is not None else build_arrays(spec)
    tp = arr.term_par if u is None else apply_inputs(arr.term_par, u)
    x = np.asarray(x, dtype=float)
    if x.shape != (arr.index.n_states,):
        raise ValueError(f"state vector must have shape "
                         f"({arr.index.n_states},), got {x.shape}")
    x5 = x[X5:N_TERM_STATES * arr.n_terminals:N_TERM_STATES]
    if (x5 <= 0).any():
        raise SingularityError("filtered DC voltage v_dc,f <= 0")
    dx = np.empty_like(x)
    # kernels are dtype-generic through the numpy path only
    if x.dtype == np.float64 and tp.dtype == np.float64 \
            and _kernels.active_flavor() == "numba":
        _kernels.rhs_jit(x, tp, arr.cab_from, arr.cab_to, arr.cab_r,
                         arr.cab_l, dx)
    else:
        _kernels.rhs_numpy(x, tp, arr.cab_from, arr.cab_to, arr.cab_r,
                           arr.cab_l, dx)
    return dx


def residual_pu(spec, x, u=None, arrays=None):
    """Residual normalized per state base (units 1/s)."""
    arr = arrays if arrays is not None else build_arrays(spec)
    return nonlinear_residual(spec, x, u, arr) / arr.x_base


def residual_inf_norm_pu(spec, x, u=None, arrays=None):
    return float(np.max(np.abs(residual_pu(spec, x, u, arrays))))


def spec_inputs(spec):
    return default_inputs(spec)
