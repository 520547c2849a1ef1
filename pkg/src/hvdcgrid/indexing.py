"""State ordering, per-unit bases and flat parameter arrays.

Each terminal contributes 18 states in a fixed order (measurement filters,
controller integrators, PLL, AC electrical states, DC-side voltage and its
filter); the cable currents follow.  All numerical kernels work on flat
arrays produced here so the same data feeds the simulator, the residual
and the analytic Jacobian.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import resolved_l_g

TERMINAL_STATES = (
    "x1", "x2", "x3", "x4",
    "gamma_p", "gamma_q", "gamma_ld", "gamma_lq",
    "theta_pll", "omega",
    "i_ld", "i_lq", "v_od", "v_oq", "i_od", "i_oq",
    "v_dc", "x5",
)
N_TERM_STATES = len(TERMINAL_STATES)  # 18

CONTROLLER_STATES = ("gamma_p", "gamma_q", "gamma_ld", "gamma_lq",
                     "theta_pll", "omega")
ELECTRICAL_STATES = ("i_ld", "i_lq", "v_od", "v_oq", "i_od", "i_oq", "v_dc")

# Offsets within a terminal block.
(X1, X2, X3, X4, GP, GQ, GLD, GLQ, TH, OM,
 ILD, ILQ, VOD, VOQ, IOD, IOQ, VDC, X5) = range(N_TERM_STATES)

# Columns of the per-terminal parameter array.
(P_W0, P_VM, P_RC, P_LC, P_CF, P_RG, P_LG, P_CEQ,
 P_KPI, P_KII, P_KPPLL, P_KIPLL, P_KPOD, P_KIOD, P_KPQ, P_KIQ,
 P_ISDVC, P_PACREF, P_QREF, P_VDCREF,
 P_NV, P_NS, P_NDC, P_IB,
 P_TMVD, P_TMVQ, P_TMID, P_TMIQ, P_TVDC) = range(29)
N_TERM_PARS = 29

INPUTS_PER_TERMINAL = ("p_ref", "v_dc_ref", "q_ref")


class StateIndex:
    """Bidirectional map between (terminal, state) pairs and vector rows."""

    def __init__(self, terminal_ids, cable_names):
        self.terminal_ids = tuple(terminal_ids)
        self.cable_names = tuple(cable_names)
        self.n_terminals = len(self.terminal_ids)
        self.n_cables = len(self.cable_names)
        self.n_states = N_TERM_STATES * self.n_terminals + self.n_cables
        self._labels = []
        self._lookup = {}
        for n, tid in enumerate(self.terminal_ids):
            for j, name in enumerate(TERMINAL_STATES):
                self._lookup[(tid, name)] = N_TERM_STATES * n + j
                self._labels.append(f"{tid}.{name}")
        base = N_TERM_STATES * self.n_terminals
        for k, cname in enumerate(self.cable_names):
            self._lookup[(cname, "i_dc")] = base + k
            self._labels.append(f"{cname}.i_dc")

    @classmethod
    def from_spec(cls, spec):
        return cls([t.id for t in spec.terminals],
                   [f"cable{c.name}" if not c.name.startswith("cable")
                    else c.name for c in spec.cables])

    def of(self, owner, state):
        try:
            return self._lookup[(owner, state)]
        except KeyError:
            raise KeyError(f"no state ({owner!r}, {state!r})") from None

    def label(self, i):
        return self._labels[i]

    @property
    def labels(self):
        return tuple(self._labels)

    def terminal_slice(self, tid):
        n = self.terminal_ids.index(tid)
        return slice(N_TERM_STATES * n, N_TERM_STATES * (n + 1))

    def cable_index(self, cname):
        return self.of(cname, "i_dc")

    @property
    def cable_slice(self):
        return slice(N_TERM_STATES * self.n_terminals, self.n_states)


@dataclass
class TerminalBases:
    """Per-unit bases of one terminal (peak-phase convention)."""

    s_base: float     # VA
    v_ac_peak: float  # V, peak phase
    i_ac_peak: float  # A, peak phase
    v_dc: float       # V


def terminal_bases(term):
    s = term.s_rated * 1e6
    v_peak = math.sqrt(2.0 / 3.0) * term.v_ac_base * 1e3
    return TerminalBases(s_base=s, v_ac_peak=v_peak,
                         i_ac_peak=s / (1.5 * v_peak),
                         v_dc=term.v_dc_base * 1e3)


@dataclass
class NetworkArrays:
    """Flat SI parameter arrays for the kernels and the Jacobian builder."""

    term_par: np.ndarray   # (N, N_TERM_PARS)
    cab_from: np.ndarray   # (K,) int64, terminal index
    cab_to: np.ndarray     # (K,) int64
    cab_r: np.ndarray      # (K,) Ohm
    cab_l: np.ndarray      # (K,) H
    index: StateIndex
    x_base: np.ndarray     # (n_states,) per-unit bases
    u_base: np.ndarray     # (3N,) input bases

    @property
    def n_terminals(self):
        return self.term_par.shape[0]

    @property
    def n_cables(self):
        return self.cab_r.shape[0]


def build_arrays(spec, dtype=np.float64):
    """Flatten a (validated) GridSpec into SI parameter arrays.

    ``dtype`` may be complex to support derivative evaluation by
    complex-step through the flattening itself (SCR conversion, cable
    capacitance lumping, unit scaling).
    """
    index = StateIndex.from_spec(spec)
    n = len(spec.terminals)
    k = len(spec.cables)
    f = spec.system_frequency
    w0 = 2.0 * math.pi * f

    tid_to_idx = {t.id: i for i, t in enumerate(spec.terminals)}
    cab_from = np.array([tid_to_idx[c.from_t] for c in spec.cables], dtype=np.int64)
    cab_to = np.array([tid_to_idx[c.to_t] for c in spec.cables], dtype=np.int64)
    cab_r = np.array([c.r_per_km * c.length for c in spec.cables], dtype=dtype)
    cab_l = np.array([c.l_per_km * c.length for c in spec.cables], dtype=dtype)

    # pi-model lumping: half of each cable's capacitance lands on each end.
    c_half = np.zeros(n, dtype=dtype)
    for c in spec.cables:
        c_half[tid_to_idx[c.from_t]] += 0.5 * c.c_per_km * c.length
        c_half[tid_to_idx[c.to_t]] += 0.5 * c.c_per_km * c.length

    tp = np.zeros((n, N_TERM_PARS), dtype=dtype)
    for i, t in enumerate(spec.terminals):
        b = terminal_bases(t)
        lg = resolved_l_g(t, f)
        g = t.gains
        tp[i, P_W0] = w0
        tp[i, P_VM] = t.v_grid_mag * b.v_ac_peak
        tp[i, P_RC] = t.r_c
        tp[i, P_LC] = t.l_c
        tp[i, P_CF] = t.c_f
        tp[i, P_RG] = t.r_g
        tp[i, P_LG] = lg
        tp[i, P_CEQ] = t.c_vsc + c_half[i]
        tp[i, P_KPI] = g.k_p_i
        tp[i, P_KII] = g.k_i_i
        tp[i, P_KPPLL] = g.k_p_pll
        tp[i, P_KIPLL] = g.k_i_pll
        if t.is_dvc:
            tp[i, P_KPOD] = g.k_p_dc
            tp[i, P_KIOD] = g.k_i_dc
            tp[i, P_VDCREF] = t.v_dc_ref * 1e3
        else:
            tp[i, P_KPOD] = g.k_p_p
            tp[i, P_KIOD] = g.k_i_p
        tp[i, P_KPQ] = g.k_p_q
        tp[i, P_KIQ] = g.k_i_q
        tp[i, P_ISDVC] = 1.0 if t.is_dvc else 0.0
        # internal AC power reference is inversion-positive
        tp[i, P_PACREF] = -t.p_ref * 1e6
        tp[i, P_QREF] = t.q_ref * 1e6
        tp[i, P_NV] = 1.0 / b.v_ac_peak
        tp[i, P_NS] = 1.0 / b.s_base
        tp[i, P_NDC] = 1.0 / b.v_dc
        tp[i, P_IB] = b.i_ac_peak
        mf = t.meas_filters
        tp[i, P_TMVD] = mf.t_mvd
        tp[i, P_TMVQ] = mf.t_mvq
        tp[i, P_TMID] = mf.t_mid
        tp[i, P_TMIQ] = mf.t_miq
        tp[i, P_TVDC] = mf.t_vdc

    x_base = np.ones(index.n_states)
    for i, t in enumerate(spec.terminals):
        b = terminal_bases(t)
        o = N_TERM_STATES * i
        x_base[o + X1] = x_base[o + X2] = b.v_ac_peak
        x_base[o + X3] = x_base[o + X4] = b.i_ac_peak
        x_base[o + GP] = x_base[o + GQ] = 1.0
        x_base[o + GLD] = x_base[o + GLQ] = b.i_ac_peak
        x_base[o + TH] = 1.0
        x_base[o + OM] = w0
        x_base[o + ILD] = x_base[o + ILQ] = b.i_ac_peak
        x_base[o + VOD] = x_base[o + VOQ] = b.v_ac_peak
        x_base[o + IOD] = x_base[o + IOQ] = b.i_ac_peak
        x_base[o + VDC] = x_base[o + X5] = b.v_dc
    for kk, c in enumerate(spec.cables):
        t_from = spec.terminals[cab_from[kk]]
        b = terminal_bases(t_from)
        x_base[N_TERM_STATES * n + kk] = b.s_base / b.v_dc

    u_base = np.ones(3 * n)
    for i, t in enumerate(spec.terminals):
        b = terminal_bases(t)
        u_base[3 * i + 0] = b.s_base
        u_base[3 * i + 1] = b.v_dc
        u_base[3 * i + 2] = b.s_base

    return NetworkArrays(term_par=tp, cab_from=cab_from, cab_to=cab_to,
                         cab_r=cab_r, cab_l=cab_l, index=index,
                         x_base=x_base, u_base=u_base)


def default_inputs(spec):
    """Input vector (P_ref, V_dc_ref, Q_ref per terminal) in SI units."""
    u = np.zeros(3 * len(spec.terminals))
    for i, t in enumerate(spec.terminals):
        u[3 * i + 0] = t.p_ref * 1e6
        u[3 * i + 1] = (t.v_dc_ref if t.v_dc_ref is not None else 0.0) * 1e3
        u[3 * i + 2] = t.q_ref * 1e6
    return u


def apply_inputs(term_par, u):
    """Copy of term_par with the setpoint slots overridden by u."""
    tp = term_par.copy()
    n = tp.shape[0]
    for i in range(n):
        tp[i, P_PACREF] = -u[3 * i + 0]
        if tp[i, P_ISDVC] != 0.0:
            tp[i, P_VDCREF] = u[3 * i + 1]
        tp[i, P_QREF] = u[3 * i + 2]
    return tp
