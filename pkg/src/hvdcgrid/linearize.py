"""Analytic linearization of the averaged model and its assembly.

The Jacobian is derived in closed form from the same equations the
kernels integrate; the numeric (central-difference) Jacobian exists only
as a test oracle.  The published state matrix ``LinearModel.A`` is
per-unit per second: ``A_pu = D^-1 A_si D`` with D the diagonal of state
bases.  Eigenvalues are unaffected by the scaling; eigenvector-derived
quantities are computed in the scaled coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dynamics import nonlinear_residual, spec_inputs
from .indexing import (
    N_TERM_STATES, StateIndex, build_arrays, default_inputs,
    P_W0, P_VM, P_RC, P_LC, P_CF, P_RG, P_LG, P_CEQ,
    P_KPI, P_KII, P_KPPLL, P_KIPLL, P_KPOD, P_KIOD, P_KPQ, P_KIQ,
    P_ISDVC, P_PACREF, P_QREF, P_VDCREF, P_NV, P_NS, P_NDC, P_IB,
    P_TMVD, P_TMVQ, P_TMID, P_TMIQ, P_TVDC,
    X1, X2, X3, X4, GP, GQ, GLD, GLQ, TH, OM,
    ILD, ILQ, VOD, VOQ, IOD, IOQ, VDC, X5,
)


def _terminal_partials(tp, n, xloc):
    """Partial derivatives of the controller intermediates of terminal n.

    Returns dicts mapping local state offset -> d(intermediate)/d(state).
    ``xloc`` is the terminal's 18-entry state slice.
    """
    x1, x2, x3, x4 = xloc[X1], xloc[X2], xloc[X3], xloc[X4]
    ild, ilq = xloc[ILD], xloc[ILQ]
    vdc, x5 = xloc[VDC], xloc[X5]
    om = xloc[OM]

    ns_ = tp[n, P_NS]
    kpi = tp[n, P_KPI]
    lc = tp[n, P_LC]
    ib = tp[n, P_IB]

    if tp[n, P_ISDVC].real != 0.0:
        de_p = {X5: tp[n, P_NDC]}
    else:
        de_p = {X1: -1.5 * x3 * ns_, X2: -1.5 * x4 * ns_,
                X3: -1.5 * x1 * ns_, X4: -1.5 * x2 * ns_}
    de_q = {X1: -1.5 * x4 * ns_, X2: 1.5 * x3 * ns_,
            X3: 1.5 * x2 * ns_, X4: -1.5 * x1 * ns_}

    didref = {z: ib * tp[n, P_KPOD] * v for z, v in de_p.items()}
    didref[GP] = didref.get(GP, 0.0) + ib * tp[n, P_KIOD]
    diqref = {z: ib * tp[n, P_KPQ] * v for z, v in de_q.items()}
    diqref[GQ] = diqref.get(GQ, 0.0) + ib * tp[n, P_KIQ]

    dvcmd_d = {z: kpi * v for z, v in didref.items()}
    dvcmd_d[GLD] = dvcmd_d.get(GLD, 0.0) + tp[n, P_KII]
    dvcmd_d[X1] = dvcmd_d.get(X1, 0.0) + 1.0
    dvcmd_d[ILD] = dvcmd_d.get(ILD, 0.0) - kpi
    dvcmd_d[ILQ] = dvcmd_d.get(ILQ, 0.0) - om * lc
    dvcmd_d[OM] = dvcmd_d.get(OM, 0.0) - lc * ilq

    dvcmd_q = {z: kpi * v for z, v in diqref.items()}
    dvcmd_q[GLQ] = dvcmd_q.get(GLQ, 0.0) + tp[n, P_KII]
    dvcmd_q[X2] = dvcmd_q.get(X2, 0.0) + 1.0
    dvcmd_q[ILQ] = dvcmd_q.get(ILQ, 0.0) - kpi
    dvcmd_q[ILD] = dvcmd_q.get(ILD, 0.0) + om * lc
    dvcmd_q[OM] = dvcmd_q.get(OM, 0.0) + lc * ild

    # controller commands at the point (needed for the v_dc/x5 chains)
    gp, gq, gld, glq = xloc[GP], xloc[GQ], xloc[GLD], xloc[GLQ]
    pmeas = 1.5 * (x1 * x3 + x2 * x4)
    qmeas = 1.5 * (x2 * x3 - x1 * x4)
    if tp[n, P_ISDVC].real != 0.0:
        e_p = (x5 - tp[n, P_VDCREF]) * tp[n, P_NDC]
    else:
        e_p = (tp[n, P_PACREF] - pmeas) * ns_
    e_q = (qmeas - tp[n, P_QREF]) * ns_
    idref = ib * (tp[n, P_KPOD] * e_p + tp[n, P_KIOD] * gp)
    iqref = ib * (tp[n, P_KPQ] * e_q + tp[n, P_KIQ] * gq)
    vcmd_d = kpi * (idref - ild) + tp[n, P_KII] * gld + x1 - om * lc * ilq
    vcmd_q = kpi * (iqref - ilq) + tp[n, P_KII] * glq + x2 + om * lc * ild

    rdc = vdc / x5
    dvcd = {z: rdc * v for z, v in dvcmd_d.items()}
    dvcd[VDC] = dvcd.get(VDC, 0.0) + vcmd_d / x5
    dvcd[X5] = dvcd.get(X5, 0.0) - vcmd_d * vdc / (x5 * x5)
    dvcq = {z: rdc * v for z, v in dvcmd_q.items()}
    dvcq[VDC] = dvcq.get(VDC, 0.0) + vcmd_q / x5
    dvcq[X5] = dvcq.get(X5, 0.0) - vcmd_q * vdc / (x5 * x5)

    return {
        "de_p": de_p, "de_q": de_q, "didref": didref, "diqref": diqref,
        "dvcd": dvcd, "dvcq": dvcq,
        "vcd": rdc * vcmd_d, "vcq": rdc * vcmd_q,
    }


def build_system_matrix(arrays, x):
    """Closed-form Jacobian d(rhs)/dx in SI units at state x."""
    tp = arrays.term_par
    nt = arrays.n_terminals
    nc = arrays.n_cables
    nstates = arrays.index.n_states
    dtype = np.result_type(tp.dtype, np.asarray(x).dtype)
    A = np.zeros((nstates, nstates), dtype=dtype)

    for n in range(nt):
        o = N_TERM_STATES * n
        xloc = x[o:o + N_TERM_STATES]
        th, om = xloc[TH], xloc[OM]
        ild, ilq = xloc[ILD], xloc[ILQ]
        vod, voq = xloc[VOD], xloc[VOQ]
        iod, ioq = xloc[IOD], xloc[IOQ]
        vdc = xloc[VDC]
        w = _terminal_partials(tp, n, xloc)
        lc, cf = tp[n, P_LC], tp[n, P_CF]
        rc, rg, lg = tp[n, P_RC], tp[n, P_RG], tp[n, P_LG]
        ceq, vm = tp[n, P_CEQ], tp[n, P_VM]

        A[o + X1, o + VOD] = 1.0 / tp[n, P_TMVD]
        A[o + X1, o + X1] = -1.0 / tp[n, P_TMVD]
        A[o + X2, o + VOQ] = 1.0 / tp[n, P_TMVQ]
        A[o + X2, o + X2] = -1.0 / tp[n, P_TMVQ]
        A[o + X3, o + IOD] = 1.0 / tp[n, P_TMID]
        A[o + X3, o + X3] = -1.0 / tp[n, P_TMID]
        A[o + X4, o + IOQ] = 1.0 / tp[n, P_TMIQ]
        A[o + X4, o + X4] = -1.0 / tp[n, P_TMIQ]

        for z, v in w["de_p"].items():
            A[o + GP, o + z] += v
        for z, v in w["de_q"].items():
            A[o + GQ, o + z] += v
        for z, v in w["didref"].items():
            A[o + GLD, o + z] += v
        A[o + GLD, o + ILD] += -1.0
        for z, v in w["diqref"].items():
            A[o + GLQ, o + z] += v
        A[o + GLQ, o + ILQ] += -1.0

        A[o + TH, o + OM] = 1.0
        A[o + TH, o + VOQ] = tp[n, P_KPPLL] * tp[n, P_NV]
        A[o + OM, o + VOQ] = tp[n, P_KIPLL] * tp[n, P_NV]

        for z, v in w["dvcd"].items():
            A[o + ILD, o + z] += v / lc
        A[o + ILD, o + ILD] += -rc / lc
        A[o + ILD, o + VOD] += -1.0 / lc
        A[o + ILD, o + ILQ] += om
        A[o + ILD, o + OM] += ilq

        for z, v in w["dvcq"].items():
            A[o + ILQ, o + z] += v / lc
        A[o + ILQ, o + ILQ] += -rc / lc
        A[o + ILQ, o + VOQ] += -1.0 / lc
        A[o + ILQ, o + ILD] += -om
        A[o + ILQ, o + OM] += -ild

        A[o + VOD, o + ILD] += 1.0 / cf
        A[o + VOD, o + IOD] += -1.0 / cf
        A[o + VOD, o + VOQ] += om
        A[o + VOD, o + OM] += voq

        A[o + VOQ, o + ILQ] += 1.0 / cf
        A[o + VOQ, o + IOQ] += -1.0 / cf
        A[o + VOQ, o + VOD] += -om
        A[o + VOQ, o + OM] += -vod

        A[o + IOD, o + IOD] += -rg / lg
        A[o + IOD, o + VOD] += 1.0 / lg
        A[o + IOD, o + TH] += vm * np.sin(th) / lg
        A[o + IOD, o + IOQ] += om
        A[o + IOD, o + OM] += ioq

        A[o + IOQ, o + IOQ] += -rg / lg
        A[o + IOQ, o + VOQ] += 1.0 / lg
        A[o + IOQ, o + TH] += vm * np.cos(th) / lg
        A[o + IOQ, o + IOD] += -om
        A[o + IOQ, o + OM] += -iod

        dpconv = {z: 1.5 * v * ild for z, v in w["dvcd"].items()}
        for z, v in w["dvcq"].items():
            dpconv[z] = dpconv.get(z, 0.0) + 1.5 * v * ilq
        dpconv[ILD] = dpconv.get(ILD, 0.0) + 1.5 * w["vcd"]
        dpconv[ILQ] = dpconv.get(ILQ, 0.0) + 1.5 * w["vcq"]
        pconv = 1.5 * (w["vcd"] * ild + w["vcq"] * ilq)
        for z, v in dpconv.items():
            A[o + VDC, o + z] += -v / (vdc * ceq)
        A[o + VDC, o + VDC] += pconv / (vdc * vdc * ceq)

        A[o + X5, o + VDC] = 1.0 / tp[n, P_TVDC]
        A[o + X5, o + X5] = -1.0 / tp[n, P_TVDC]

    base = N_TERM_STATES * nt
    for k in range(nc):
        f = int(arrays.cab_from[k])
        t = int(arrays.cab_to[k])
        A[base + k, N_TERM_STATES * f + VDC] += 1.0 / arrays.cab_l[k]
        A[base + k, N_TERM_STATES * t + VDC] += -1.0 / arrays.cab_l[k]
        A[base + k, base + k] += -arrays.cab_r[k] / arrays.cab_l[k]
        A[N_TERM_STATES * f + VDC, base + k] += -1.0 / tp[f, P_CEQ]
        A[N_TERM_STATES * t + VDC, base + k] += 1.0 / tp[t, P_CEQ]
    return A


def build_input_matrix(arrays, x):
    """Closed-form d(rhs)/du, u = (P_ref, V_dc_ref, Q_ref per terminal), SI."""
    tp = arrays.term_par
    nt = arrays.n_terminals
    dtype = np.result_type(tp.dtype, np.asarray(x).dtype)
    E = np.zeros((arrays.index.n_states, 3 * nt), dtype=dtype)
    for n in range(nt):
        o = N_TERM_STATES * n
        xloc = x[o:o + N_TERM_STATES]
        ild, ilq = xloc[ILD], xloc[ILQ]
        vdc, x5 = xloc[VDC], xloc[X5]
        rdc = vdc / x5
        lc, ceq = tp[n, P_LC], tp[n, P_CEQ]
        kpi, ib = tp[n, P_KPI], tp[n, P_IB]
        is_dvc = tp[n, P_ISDVC].real != 0.0

        # d-axis outer loop reference input
        if is_dvc:
            col = 3 * n + 1                  # V_dc_ref
            de_p_du = -tp[n, P_NDC]
        else:
            col = 3 * n + 0                  # P_ref (rectification positive)
            de_p_du = -tp[n, P_NS]           # e_p = (-P_ref - pmeas) * ns
        didref_du = ib * tp[n, P_KPOD] * de_p_du
        E[o + GP, col] += de_p_du
        E[o + GLD, col] += didref_du
        E[o + ILD, col] += rdc * kpi * didref_du / lc
        E[o + VDC, col] += -1.5 * rdc * kpi * didref_du * ild / (vdc * ceq)

        colq = 3 * n + 2
        de_q_du = -tp[n, P_NS]
        diqref_du = ib * tp[n, P_KPQ] * de_q_du
        E[o + GQ, colq] += de_q_du
        E[o + GLQ, colq] += diqref_du
        E[o + ILQ, colq] += rdc * kpi * diqref_du / lc
        E[o + VDC, colq] += -1.5 * rdc * kpi * diqref_du * ilq / (vdc * ceq)
    return E


def numeric_jacobian(spec, x0, u0=None, rel=1e-6, floor=1.0, arrays=None):
    """Central-difference Jacobian oracle.

    Step policy: h_i = rel * max(floor, |x_i| in per-unit), applied in SI,
    i.e. h_i = rel * max(floor * base_i, |x_i|).  The floor is per-unit so
    states resting at zero still get a step of sensible physical size.
    """
    if rel <= 0 or floor <= 0:
        raise ValueError("step policy requires rel > 0 and floor > 0")
    arr = arrays if arrays is not None else build_arrays(spec)
    x0 = np.asarray(x0, dtype=float)
    u = u0 if u0 is not None else default_inputs(spec)
    n = x0.size
    J = np.empty((n, n))
    for i in range(n):
        h = rel * max(floor * arr.x_base[i], abs(x0[i]))
        xp = x0.copy(); xp[i] += h
        xm = x0.copy(); xm[i] -= h
        J[:, i] = (nonlinear_residual(spec, xp, u, arr)
                   - nonlinear_residual(spec, xm, u, arr)) / (2.0 * h)
    return J


def scaled_matrix(A_si, x_base, col_base=None):
    """Similarity/unit scaling to per-unit per second."""
    cb = x_base if col_base is None else col_base
    return A_si * (cb[None, :] / np.asarray(x_base)[:, None])


def scaled_error(A1_si, A2_si, x_base):
    """Max elementwise error between two Jacobians after pu scaling.

    Relative where entries are large, absolute (1/s) where small.
    """
    s1 = scaled_matrix(A1_si, x_base)
    s2 = scaled_matrix(A2_si, x_base)
    return float(np.max(np.abs(s1 - s2) / np.maximum(1.0, np.abs(s1))))


@dataclass
class LinearModel:
    """Linearized system: pu state matrix plus assembly metadata."""

    A: np.ndarray          # per-unit/s
    E: np.ndarray          # per-unit input matrix (inputs pu of their base)
    index: StateIndex
    x_base: np.ndarray
    u_base: np.ndarray
    x0: np.ndarray         # SI operating state
    spec: object = None
    operating_point: object = None
    inputs: tuple = ()
    B_blocks: dict = field(default_factory=dict)
    E_blocks: dict = field(default_factory=dict)
    A_blocks: dict = field(default_factory=dict)

    @property
    def n_states(self):
        return self.A.shape[0]

    @property
    def A_si(self):
        return self.A * (self.x_base[:, None] / self.x_base[None, :])


def linearize(spec, op, arrays=None):
    """LinearModel of the full grid at a converged operating point."""
    arr = arrays if arrays is not None else build_arrays(spec)
    A_si = build_system_matrix(arr, op.x0)
    E_si = build_input_matrix(arr, op.x0)
    A_pu = scaled_matrix(A_si, arr.x_base)
    E_pu = E_si * (arr.u_base[None, :] / arr.x_base[:, None])

    idx = arr.index
    nt = idx.n_terminals
    base = N_TERM_STATES * nt
    A_blocks, B_blocks, E_blocks = {}, {}, {}
    for n, tid in enumerate(idx.terminal_ids):
        sl = slice(N_TERM_STATES * n, N_TERM_STATES * (n + 1))
        A_blocks[tid] = A_si[sl, sl].copy()
        B_blocks[tid] = A_si[sl, base:].copy()
        E_blocks[tid] = E_si[sl, 3 * n:3 * n + 3].copy()

    labels = []
    for tid in idx.terminal_ids:
        labels += [f"{tid}.p_ref", f"{tid}.v_dc_ref", f"{tid}.q_ref"]
    return LinearModel(A=A_pu, E=E_pu, index=idx, x_base=arr.x_base,
                       u_base=arr.u_base, x0=op.x0.copy(), spec=spec,
                       operating_point=op, inputs=tuple(labels),
                       B_blocks=B_blocks, E_blocks=E_blocks,
                       A_blocks=A_blocks)


def build_terminal_block(spec, tid, op, arrays=None):
    """(A_n, B_n, E_n) for one terminal, SI units.

    A_n: the 18x18 self block; B_n: coupling of the terminal's states to
    the cable currents; E_n: coupling to that terminal's setpoint inputs.
    """
    arr = arrays if arrays is not None else build_arrays(spec)
    A_si = build_system_matrix(arr, op.x0)
    E_si = build_input_matrix(arr, op.x0)
    n = arr.index.terminal_ids.index(tid)
    sl = slice(N_TERM_STATES * n, N_TERM_STATES * (n + 1))
    base = N_TERM_STATES * arr.index.n_terminals
    return (A_si[sl, sl].copy(), A_si[sl, base:].copy(),
            E_si[sl, 3 * n:3 * n + 3].copy())


def build_dc_network_block(spec, dc, arrays=None):
    """Isolated DC-network block: states (v_dc per node, i_dc per cable).

    Returns (F, G, E): F the (N+K)x(N+K) state matrix with the DC power
    injections held as exogenous inputs, G the KxK cable self block used
    in augmentation, and E the (N+K)xN input matrix for the injections.
    """
    arr = arrays if arrays is not None else build_arrays(spec)
    nt = arr.n_terminals
    nc = arr.n_cables
    F = np.zeros((nt + nc, nt + nc))
    E = np.zeros((nt + nc, nt))
    ceq = arr.term_par[:, P_CEQ].real
    for n in range(nt):
        F[n, n] = -dc.p_dc[n] / (ceq[n] * dc.v_dc[n] ** 2)
        E[n, n] = 1.0 / (ceq[n] * dc.v_dc[n])
    for k in range(nc):
        f = int(arr.cab_from[k])
        t = int(arr.cab_to[k])
        F[f, nt + k] += -1.0 / ceq[f]
        F[t, nt + k] += 1.0 / ceq[t]
        F[nt + k, f] += 1.0 / arr.cab_l[k].real
        F[nt + k, t] += -1.0 / arr.cab_l[k].real
        F[nt + k, nt + k] = -arr.cab_r[k].real / arr.cab_l[k].real
    G = F[nt:, nt:].copy()
    return F, G, E


def augment(terminal_blocks, dc_block, index, arrays, x0, spec=None, op=None):
    """Assemble the full system matrix from per-terminal and DC blocks.

    ``terminal_blocks`` maps terminal id -> (A_n, B_n, E_n); ``dc_block``
    is the (F, G, E) triple of :func:`build_dc_network_block`.
    """
    nt = index.n_terminals
    nc = index.n_cables
    base = N_TERM_STATES * nt
    if set(terminal_blocks) != set(index.terminal_ids):
        raise ValueError("terminal blocks do not match the state index")
    A = np.zeros((index.n_states, index.n_states))
    E = np.zeros((index.n_states, 3 * nt))
    for n, tid in enumerate(index.terminal_ids):
        A_n, B_n, E_n = terminal_blocks[tid]
        if A_n.shape != (N_TERM_STATES, N_TERM_STATES) or \
                B_n.shape != (N_TERM_STATES, nc):
            raise ValueError(f"terminal block {tid}: wrong dimensions")
        sl = slice(N_TERM_STATES * n, N_TERM_STATES * (n + 1))
        A[sl, sl] = A_n
        A[sl, base:] = B_n
        E[sl, 3 * n:3 * n + 3] = E_n
    _, G, _ = dc_block
    A[base:, base:] = G
    for k in range(nc):
        f = int(arrays.cab_from[k])
        t = int(arrays.cab_to[k])
        A[base + k, N_TERM_STATES * f + VDC] += 1.0 / arrays.cab_l[k].real
        A[base + k, N_TERM_STATES * t + VDC] += -1.0 / arrays.cab_l[k].real

    A_pu = scaled_matrix(A, arrays.x_base)
    E_pu = E * (arrays.u_base[None, :] / arrays.x_base[:, None])
    labels = []
    for tid in index.terminal_ids:
        labels += [f"{tid}.p_ref", f"{tid}.v_dc_ref", f"{tid}.q_ref"]
    blocks = {tid: blk[0] for tid, blk in terminal_blocks.items()}
    bblocks = {tid: blk[1] for tid, blk in terminal_blocks.items()}
    eblocks = {tid: blk[2] for tid, blk in terminal_blocks.items()}
    return LinearModel(A=A_pu, E=E_pu, index=index, x_base=arrays.x_base,
                       u_base=arrays.u_base, x0=np.asarray(x0, float).copy(),
                       spec=spec, operating_point=op, inputs=tuple(labels),
                       B_blocks=bblocks, E_blocks=eblocks, A_blocks=blocks)
