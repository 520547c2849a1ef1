"""Operating point: DC power flow and per-terminal AC equilibria.

The solve is staged: the AC equilibrium of every power-controlled terminal
is independent of the DC side (the converter-voltage scaling V_dc/V_dc,f
is one at steady state), so those are solved first and their exact DC
injections (setpoint minus phase-reactor loss) feed the DC power flow.
The DC-voltage-controlled terminal is the slack node; its AC equilibrium
follows from the DC power it has to balance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import resolved_l_g
from .errors import ConsistencyError, SteadyStateError
from .dynamics import residual_inf_norm_pu
from .indexing import (
    N_TERM_STATES, StateIndex, build_arrays, terminal_bases,
    X1, X2, X3, X4, GP, GQ, GLD, GLQ, TH, OM,
    ILD, ILQ, VOD, VOQ, IOD, IOQ, VDC, X5,
)

NEWTON_TOL = 1e-12
NEWTON_MAX_ITER = 50


@dataclass
class TerminalEquilibrium:
    """AC-side equilibrium of one terminal in its PLL frame (SI, peak)."""

    i_ld: float
    i_lq: float
    v_od: float
    v_oq: float
    i_od: float
    i_oq: float
    delta: float      # PCC-to-source angle (rad); equals theta_pll at rest
    v_cd: float
    v_cq: float
    p_ac: float       # power injected into the AC grid at the PCC (W)
    q_ac: float
    p_dc: float       # power injected into the DC node (W), rectification > 0


@dataclass
class DcSolution:
    v_dc: np.ndarray      # per terminal node (V)
    i_dc: np.ndarray      # per cable (A), from -> to
    p_dc: np.ndarray      # per terminal node (W), injection into DC grid
    slack: int            # terminal index of the DVC node
    residual_pu: float
    iterations: int


@dataclass
class OperatingPoint:
    """Converged steady state of the whole AC/DC system."""

    x0: np.ndarray
    index: StateIndex
    terminals: dict       # id -> TerminalEquilibrium
    dc: DcSolution
    residual_inf_pu: float

    def state(self, owner, name):
        return self.x0[self.index.of(owner, name)]


def _terminal_newton(p_target, mode, v_m, r_g, x_g, r_c, x_cf, q_ref, s_base):
    """Inner 2-variable Newton shared by the PQ and slack solves.

    Unknowns: PCC voltage magnitude V (v_oq = 0 in the locked PLL frame)
    and the PCC active power p_ac.  ``mode`` selects the power equation:
    'pac' pins p_ac = p_target, 'pdc' pins the DC-side injection
    (p_target = p_dc) including the phase-reactor loss.
    """

    def res(z):
        v, p_ac = z
        i_od = p_ac / (1.5 * v)
        i_oq = -q_ref / (1.5 * v)
        a = v - r_g * i_od + x_g * i_oq
        b = -r_g * i_oq - x_g * i_od
        r1 = (a * a + b * b - v_m * v_m) / (v_m * v_m)
        if mode == "pac":
            r2 = (p_ac - p_target) / s_base
        else:
            i_ld = i_od
            i_lq = i_oq + x_cf * v
            loss = 1.5 * r_c * (i_ld * i_ld + i_lq * i_lq)
            r2 = (p_target + p_ac + loss) / s_base
        return np.array([r1, r2])

    z = np.array([v_m, -p_target if mode == "pdc" else p_target])
    r = res(z)
    for it in range(NEWTON_MAX_ITER):
        if np.max(np.abs(r)) < NEWTON_TOL:
            return z
        jac = np.empty((2, 2))
        for j in range(2):
            h = 1e-7 * max(1.0, abs(z[j]))
            zp = z.copy(); zp[j] += h
            zm = z.copy(); zm[j] -= h
            jac[:, j] = (res(zp) - res(zm)) / (2.0 * h)
        try:
            step = np.linalg.solve(jac, -r)
        except np.linalg.LinAlgError:
            raise SteadyStateError(
                "terminal equilibrium Newton hit a singular Jacobian "
                "(operating point at or beyond maximum power transfer)",
                residual=float(np.max(np.abs(r))), iterations=it)
        # damped update keeping the voltage positive
        lam = 1.0
        while lam > 1e-6 and z[0] + lam * step[0] <= 0.05 * v_m:
            lam *= 0.5
        z = z + lam * step
        r = res(z)
        if not np.isfinite(r).all():
            raise SteadyStateError(
                "terminal equilibrium Newton diverged",
                residual=float("nan"), iterations=it)
    raise SteadyStateError(
        f"terminal equilibrium did not converge in {NEWTON_MAX_ITER} "
        f"iterations (residual {np.max(np.abs(r)):.3e}); the requested "
        "power may exceed the transfer capability of this grid strength",
        residual=float(np.max(np.abs(r))), iterations=NEWTON_MAX_ITER)


def solve_terminal_steady_state(term, p_dc, v_dc, q_ref, f, p_ac=None):
    """AC equilibrium of one terminal.

    Either the DC-side injection ``p_dc`` (W, rectification positive) or
    the PCC active power ``p_ac`` (W, inversion positive) is pinned; the
    other follows from the phase-reactor loss.  ``v_dc`` only labels the
    result (the AC equilibrium does not depend on it).
    """
    b = terminal_bases(term)
    w0 = 2.0 * math.pi * f
    v_m = term.v_grid_mag * b.v_ac_peak
    x_g = w0 * resolved_l_g(term, f)
    x_cf = w0 * term.c_f

    if p_ac is not None:
        z = _terminal_newton(p_ac, "pac", v_m, term.r_g, x_g, term.r_c,
                             x_cf, q_ref, b.s_base)
    else:
        z = _terminal_newton(p_dc, "pdc", v_m, term.r_g, x_g, term.r_c,
                             x_cf, q_ref, b.s_base)
    v, p = z
    i_od = p / (1.5 * v)
    i_oq = -q_ref / (1.5 * v)
    a = v - term.r_g * i_od + x_g * i_oq
    bq = -term.r_g * i_oq - x_g * i_od
    delta = math.atan2(-bq, a)
    i_ld = i_od
    i_lq = i_oq + x_cf * v
    v_cd = v + term.r_c * i_ld - w0 * term.l_c * i_lq
    v_cq = term.r_c * i_lq + w0 * term.l_c * i_ld
    p_conv = 1.5 * (v_cd * i_ld + v_cq * i_lq)
    return TerminalEquilibrium(
        i_ld=i_ld, i_lq=i_lq, v_od=v, v_oq=0.0, i_od=i_od, i_oq=i_oq,
        delta=delta, v_cd=v_cd, v_cq=v_cq, p_ac=p, q_ac=q_ref,
        p_dc=-p_conv)


def _pq_injections(spec):
    """DC injections of the power-controlled terminals (exact, with loss)."""
    n = len(spec.terminals)
    slack = next(i for i, t in enumerate(spec.terminals) if t.is_dvc)
    p_inj = np.zeros(n)
    eqs = {}
    for i, t in enumerate(spec.terminals):
        if i == slack:
            continue
        eq = solve_terminal_steady_state(t, None, None, t.q_ref * 1e6,
                                         spec.system_frequency,
                                         p_ac=-t.p_ref * 1e6)
        p_inj[i] = eq.p_dc
        eqs[t.id] = eq
    return slack, p_inj, eqs


def solve_dc_power_flow(spec, max_iter=NEWTON_MAX_ITER):
    """DC network equilibrium with the DVC terminal as slack node.

    Newton iteration on the nodal power mismatch
    ``f_n = P_n - V_n * (net line outflow at n)`` over the non-slack node
    voltages.
    """
    terms = spec.terminals
    n = len(terms)
    slack, p_inj, _ = _pq_injections(spec)

    tid_to_idx = {t.id: i for i, t in enumerate(terms)}
    cf = np.array([tid_to_idx[c.from_t] for c in spec.cables], dtype=int)
    ct = np.array([tid_to_idx[c.to_t] for c in spec.cables], dtype=int)
    r = np.array([c.r_total for c in spec.cables])

    v_ref = terms[slack].v_dc_ref * 1e3
    v = np.full(n, v_ref)
    free = [i for i in range(n) if i != slack]
    pos = {node: j for j, node in enumerate(free)}
    s_base = terminal_bases(terms[slack]).s_base

    def outflow(v):
        flow = (v[cf] - v[ct]) / r
        out = np.zeros(n)
        np.add.at(out, cf, flow)
        np.subtract.at(out, ct, flow)
        return out, flow

    def power_mismatch(v):
        out, _ = outflow(v)
        return (p_inj - v * out)[free]

    it = 0
    for it in range(max_iter):
        fvec = power_mismatch(v)
        if len(free) == 0 or np.max(np.abs(fvec)) / s_base < NEWTON_TOL:
            break
        out, _ = outflow(v)
        jac = np.zeros((len(free), len(free)))
        for k in range(len(r)):
            a, b = cf[k], ct[k]
            ya = 1.0 / r[k]
            if a in pos:
                jac[pos[a], pos[a]] -= v[a] * ya
                if b in pos:
                    jac[pos[a], pos[b]] += v[a] * ya
            if b in pos:
                jac[pos[b], pos[b]] -= v[b] * ya
                if a in pos:
                    jac[pos[b], pos[a]] += v[b] * ya
        for j, node in enumerate(free):
            jac[j, j] -= out[node]
        try:
            dv = np.linalg.solve(jac, -fvec)
        except np.linalg.LinAlgError:
            raise SteadyStateError(
                "DC power flow Jacobian singular",
                residual=float(np.max(np.abs(fvec))) / s_base, iterations=it)
        v[free] += dv
        if (v <= 0).any() or not np.isfinite(v).all():
            raise SteadyStateError(
                "DC power flow diverged (node voltage collapsed)",
                residual=float("nan"), iterations=it)
    else:
        res = float(np.max(np.abs(power_mismatch(v)))) / s_base
        raise SteadyStateError(
            f"DC power flow did not converge in {max_iter} iterations "
            f"(residual {res:.3e} pu)", residual=res, iterations=max_iter)

    out, flow = outflow(v)
    p = p_inj.copy()
    p[slack] = v[slack] * out[slack]
    res = (float(np.max(np.abs(power_mismatch(v)))) / s_base) if free else 0.0
    return DcSolution(v_dc=v, i_dc=flow, p_dc=p, slack=slack,
                      residual_pu=res, iterations=it + 1)


def solve_ac_equilibria(spec, dc):
    """AC equilibria of all terminals given the DC solution."""
    eqs = {}
    for i, t in enumerate(spec.terminals):
        if i == dc.slack:
            eqs[t.id] = solve_terminal_steady_state(
                t, dc.p_dc[i], dc.v_dc[i], t.q_ref * 1e6,
                spec.system_frequency)
        else:
            eqs[t.id] = solve_terminal_steady_state(
                t, None, dc.v_dc[i], t.q_ref * 1e6, spec.system_frequency,
                p_ac=-t.p_ref * 1e6)
    return eqs


def assemble_operating_point(spec, dc, ac_eqs, arrays=None,
                             residual_tol=1e-8):
    """Build the full state vector and verify the model residual.

    Controller integrator states are set so every loop output equals its
    equilibrium command; the global nonlinear residual is then checked
    against ``residual_tol`` (per-unit infinity norm).
    """
    arr = arrays if arrays is not None else build_arrays(spec)
    index = arr.index
    n = len(spec.terminals)
    x = np.zeros(index.n_states)
    w0 = 2.0 * math.pi * spec.system_frequency

    for i, t in enumerate(spec.terminals):
        eq = ac_eqs[t.id]
        b = terminal_bases(t)
        g = t.gains
        o = N_TERM_STATES * i
        k_i_od = g.k_i_dc if t.is_dvc else g.k_i_p
        if g.k_i_i <= 0 or k_i_od <= 0 or g.k_i_q <= 0:
            raise SteadyStateError(
                f"terminal {t.id}: integral gains must be > 0 to hold an "
                "equilibrium")
        x[o + X1] = eq.v_od
        x[o + X2] = eq.v_oq
        x[o + X3] = eq.i_od
        x[o + X4] = eq.i_oq
        x[o + GP] = eq.i_ld / (b.i_ac_peak * k_i_od)
        x[o + GQ] = eq.i_lq / (b.i_ac_peak * g.k_i_q)
        x[o + GLD] = t.r_c * eq.i_ld / g.k_i_i
        x[o + GLQ] = t.r_c * eq.i_lq / g.k_i_i
        x[o + TH] = eq.delta
        x[o + OM] = w0
        x[o + ILD] = eq.i_ld
        x[o + ILQ] = eq.i_lq
        x[o + VOD] = eq.v_od
        x[o + VOQ] = eq.v_oq
        x[o + IOD] = eq.i_od
        x[o + IOQ] = eq.i_oq
        x[o + VDC] = dc.v_dc[i]
        x[o + X5] = dc.v_dc[i]
    x[N_TERM_STATES * n:] = dc.i_dc

    res = residual_inf_norm_pu(spec, x, arrays=arr)
    if res >= residual_tol:
        raise ConsistencyError(
            f"assembled operating point residual {res:.3e} pu exceeds "
            f"{residual_tol:.0e} (inconsistent component solutions)")
    return OperatingPoint(x0=x, index=index, terminals=dict(ac_eqs), dc=dc,
                          residual_inf_pu=res)


def solve_operating_point(spec, arrays=None):
    """End-to-end steady-state solve for a validated spec."""
    dc = solve_dc_power_flow(spec)
    ac = solve_ac_equilibria(spec, dc)
    return assemble_operating_point(spec, dc, ac, arrays=arrays)
