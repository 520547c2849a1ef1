"""Hot numerical kernels: nonlinear state derivative and fixed-step RK4.

Two implementations of the same math live here:

* a scalar-loop version compiled with ``numba.njit`` (default), and
* a vectorized pure-numpy fallback, selected by setting the environment
  variable ``HVDCGRID_NO_NUMBA=1`` before import (or if numba is missing).

``benchmarks/bench_kernels.py`` compares the two.
"""

from __future__ import annotations

import math
import os

import numpy as np

from .indexing import (
    N_TERM_STATES,
    P_W0, P_VM, P_RC, P_LC, P_CF, P_RG, P_LG, P_CEQ,
    P_KPI, P_KII, P_KPPLL, P_KIPLL, P_KPOD, P_KIOD, P_KPQ, P_KIQ,
    P_ISDVC, P_PACREF, P_QREF, P_VDCREF,
    P_NV, P_NS, P_NDC, P_IB,
    P_TMVD, P_TMVQ, P_TMID, P_TMIQ, P_TVDC,
    X1, X2, X3, X4, GP, GQ, GLD, GLQ, TH, OM,
    ILD, ILQ, VOD, VOQ, IOD, IOQ, VDC, X5,
)

NUMBA_DISABLED = os.environ.get("HVDCGRID_NO_NUMBA", "") == "1"

try:  # pragma: no cover - exercised implicitly
    if NUMBA_DISABLED:
        raise ImportError
    from numba import njit
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False


def _rhs_loops(x, tp, cab_from, cab_to, cab_r, cab_l, dx):
    """State derivative, scalar loops (njit-compiled in the default path).

    Sign conventions: i_l flows converter -> PCC, i_o flows PCC -> grid
    source, cable current flows from -> to.  The dq frame of each terminal
    rotates at its PLL frequency state; theta_pll is the frame angle
    relative to that terminal's source EMF frame.
    """
    nt = tp.shape[0]
    nc = cab_r.shape[0]
    for n in range(nt):
        o = N_TERM_STATES * n
        x1 = x[o + X1]; x2 = x[o + X2]; x3 = x[o + X3]; x4 = x[o + X4]
        gp = x[o + GP]; gq = x[o + GQ]; gld = x[o + GLD]; glq = x[o + GLQ]
        th = x[o + TH]; om = x[o + OM]
        ild = x[o + ILD]; ilq = x[o + ILQ]
        vod = x[o + VOD]; voq = x[o + VOQ]
        iod = x[o + IOD]; ioq = x[o + IOQ]
        vdc = x[o + VDC]; x5 = x[o + X5]

        w0 = tp[n, P_W0]; vm = tp[n, P_VM]
        rc = tp[n, P_RC]; lc = tp[n, P_LC]; cf = tp[n, P_CF]
        rg = tp[n, P_RG]; lg = tp[n, P_LG]; ceq = tp[n, P_CEQ]
        kpi = tp[n, P_KPI]; kii = tp[n, P_KII]
        kppll = tp[n, P_KPPLL]; kipll = tp[n, P_KIPLL]
        kpod = tp[n, P_KPOD]; kiod = tp[n, P_KIOD]
        kpq = tp[n, P_KPQ]; kiq = tp[n, P_KIQ]
        nv = tp[n, P_NV]; ns = tp[n, P_NS]; ndc = tp[n, P_NDC]
        ib = tp[n, P_IB]

        pmeas = 1.5 * (x1 * x3 + x2 * x4)
        qmeas = 1.5 * (x2 * x3 - x1 * x4)
        if tp[n, P_ISDVC] != 0.0:
            e_p = (x5 - tp[n, P_VDCREF]) * ndc
        else:
            e_p = (tp[n, P_PACREF] - pmeas) * ns
        e_q = (qmeas - tp[n, P_QREF]) * ns
        idref = ib * (kpod * e_p + kiod * gp)
        iqref = ib * (kpq * e_q + kiq * gq)

        vcmd_d = kpi * (idref - ild) + kii * gld + x1 - om * lc * ilq
        vcmd_q = kpi * (iqref - ilq) + kii * glq + x2 + om * lc * ild
        rdc = vdc / x5
        vcd = rdc * vcmd_d
        vcq = rdc * vcmd_q
        vgd = vm * math.cos(th)
        vgq = -vm * math.sin(th)
        pconv = 1.5 * (vcd * ild + vcq * ilq)

        dx[o + X1] = (vod - x1) / tp[n, P_TMVD]
        dx[o + X2] = (voq - x2) / tp[n, P_TMVQ]
        dx[o + X3] = (iod - x3) / tp[n, P_TMID]
        dx[o + X4] = (ioq - x4) / tp[n, P_TMIQ]
        dx[o + GP] = e_p
        dx[o + GQ] = e_q
        dx[o + GLD] = idref - ild
        dx[o + GLQ] = iqref - ilq
        dx[o + TH] = om + kppll * nv * voq - w0
        dx[o + OM] = kipll * nv * voq
        dx[o + ILD] = (-rc * ild + vcd - vod) / lc + om * ilq
        dx[o + ILQ] = (-rc * ilq + vcq - voq) / lc - om * ild
        dx[o + VOD] = (ild - iod) / cf + om * voq
        dx[o + VOQ] = (ilq - ioq) / cf - om * vod
        dx[o + IOD] = (-rg * iod + vod - vgd) / lg + om * ioq
        dx[o + IOQ] = (-rg * ioq + voq - vgq) / lg - om * iod
        dx[o + VDC] = -pconv / (vdc * ceq)
        dx[o + X5] = (vdc - x5) / tp[n, P_TVDC]

    base = N_TERM_STATES * nt
    for k in range(nc):
        f = cab_from[k]
        t = cab_to[k]
        i = x[base + k]
        dx[base + k] = (x[N_TERM_STATES * f + VDC]
                        - x[N_TERM_STATES * t + VDC] - cab_r[k] * i) / cab_l[k]
        dx[N_TERM_STATES * f + VDC] -= i / tp[f, P_CEQ]
        dx[N_TERM_STATES * t + VDC] += i / tp[t, P_CEQ]
    return dx


def _rhs_numpy(x, tp, cab_from, cab_to, cab_r, cab_l, dx):
    """Vectorized fallback; identical math to ``_rhs_loops``.

    Works for real and complex dtypes (the complex path backs the
    complex-step parameter derivatives).
    """
    nt = tp.shape[0]
    base = N_TERM_STATES * nt
    X = x[:base].reshape(nt, N_TERM_STATES)
    D = dx[:base].reshape(nt, N_TERM_STATES)

    x1 = X[:, X1]; x2 = X[:, X2]; x3 = X[:, X3]; x4 = X[:, X4]
    gp = X[:, GP]; gq = X[:, GQ]; gld = X[:, GLD]; glq = X[:, GLQ]
    th = X[:, TH]; om = X[:, OM]
    ild = X[:, ILD]; ilq = X[:, ILQ]
    vod = X[:, VOD]; voq = X[:, VOQ]
    iod = X[:, IOD]; ioq = X[:, IOQ]
    vdc = X[:, VDC]; x5 = X[:, X5]

    pmeas = 1.5 * (x1 * x3 + x2 * x4)
    qmeas = 1.5 * (x2 * x3 - x1 * x4)
    is_dvc = tp[:, P_ISDVC].real != 0.0
    e_p = np.where(is_dvc,
                   (x5 - tp[:, P_VDCREF]) * tp[:, P_NDC],
                   (tp[:, P_PACREF] - pmeas) * tp[:, P_NS])
    e_q = (qmeas - tp[:, P_QREF]) * tp[:, P_NS]
    idref = tp[:, P_IB] * (tp[:, P_KPOD] * e_p + tp[:, P_KIOD] * gp)
    iqref = tp[:, P_IB] * (tp[:, P_KPQ] * e_q + tp[:, P_KIQ] * gq)

    lc = tp[:, P_LC]
    vcmd_d = tp[:, P_KPI] * (idref - ild) + tp[:, P_KII] * gld + x1 - om * lc * ilq
    vcmd_q = tp[:, P_KPI] * (iqref - ilq) + tp[:, P_KII] * glq + x2 + om * lc * ild
    rdc = vdc / x5
    vcd = rdc * vcmd_d
    vcq = rdc * vcmd_q
    vgd = tp[:, P_VM] * np.cos(th)
    vgq = -tp[:, P_VM] * np.sin(th)
    pconv = 1.5 * (vcd * ild + vcq * ilq)

    D[:, X1] = (vod - x1) / tp[:, P_TMVD]
    D[:, X2] = (voq - x2) / tp[:, P_TMVQ]
    D[:, X3] = (iod - x3) / tp[:, P_TMID]
    D[:, X4] = (ioq - x4) / tp[:, P_TMIQ]
    D[:, GP] = e_p
    D[:, GQ] = e_q
    D[:, GLD] = idref - ild
    D[:, GLQ] = iqref - ilq
    D[:, TH] = om + tp[:, P_KPPLL] * tp[:, P_NV] * voq - tp[:, P_W0]
    D[:, OM] = tp[:, P_KIPLL] * tp[:, P_NV] * voq
    D[:, ILD] = (-tp[:, P_RC] * ild + vcd - vod) / lc + om * ilq
    D[:, ILQ] = (-tp[:, P_RC] * ilq + vcq - voq) / lc - om * ild
    D[:, VOD] = (ild - iod) / tp[:, P_CF] + om * voq
    D[:, VOQ] = (ilq - ioq) / tp[:, P_CF] - om * vod
    D[:, IOD] = (-tp[:, P_RG] * iod + vod - vgd) / tp[:, P_LG] + om * ioq
    D[:, IOQ] = (-tp[:, P_RG] * ioq + voq - vgq) / tp[:, P_LG] - om * iod
    D[:, VDC] = -pconv / (vdc * tp[:, P_CEQ])
    D[:, X5] = (vdc - x5) / tp[:, P_TVDC]

    i_dc = x[base:]
    dx[base:] = (X[cab_from, VDC] - X[cab_to, VDC] - cab_r * i_dc) / cab_l
    np.subtract.at(D[:, VDC], cab_from, i_dc / tp[cab_from, P_CEQ])
    np.add.at(D[:, VDC], cab_to, i_dc / tp[cab_to, P_CEQ])
    return dx


def rhs_numpy(x, tp, cab_from, cab_to, cab_r, cab_l, dx):
    return _rhs_numpy(x, tp, cab_from, cab_to, cab_r, cab_l, dx)


def rk4_numpy(x, tp, cab_from, cab_to, cab_r, cab_l, dt, n_steps,
              save_every, out, inv_base, div_limit):
    """Pure-numpy RK4 companion to the jit kernel."""
    ns = x.shape[0]
    k1 = np.empty(ns); k2 = np.empty(ns); k3 = np.empty(ns); k4 = np.empty(ns)
    row = 0
    for step in range(n_steps):
        _rhs_numpy(x, tp, cab_from, cab_to, cab_r, cab_l, k1)
        _rhs_numpy(x + 0.5 * dt * k1, tp, cab_from, cab_to, cab_r, cab_l, k2)
        _rhs_numpy(x + 0.5 * dt * k2, tp, cab_from, cab_to, cab_r, cab_l, k3)
        _rhs_numpy(x + dt * k3, tp, cab_from, cab_to, cab_r, cab_l, k4)
        x += (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if (step + 1) % save_every == 0:
            out[row] = x
            row += 1
            scaled = np.abs(x) * inv_base
            if (scaled > div_limit).any() or not np.isfinite(scaled).all():
                return row, 1
    return row, 0


if HAVE_NUMBA:
    rhs_jit = njit(cache=True)(_rhs_loops)

    @njit(cache=True)
    def rk4_jit(x, tp, cab_from, cab_to, cab_r, cab_l, dt, n_steps,
                save_every, out, inv_base, div_limit):
        ns = x.shape[0]
        k1 = np.empty(ns)
        k2 = np.empty(ns)
        k3 = np.empty(ns)
        k4 = np.empty(ns)
        xt = np.empty(ns)
        row = 0
        for step in range(n_steps):
            rhs_jit(x, tp, cab_from, cab_to, cab_r, cab_l, k1)
            for i in range(ns):
                xt[i] = x[i] + 0.5 * dt * k1[i]
            rhs_jit(xt, tp, cab_from, cab_to, cab_r, cab_l, k2)
            for i in range(ns):
                xt[i] = x[i] + 0.5 * dt * k2[i]
            rhs_jit(xt, tp, cab_from, cab_to, cab_r, cab_l, k3)
            for i in range(ns):
                xt[i] = x[i] + dt * k3[i]
            rhs_jit(xt, tp, cab_from, cab_to, cab_r, cab_l, k4)
            for i in range(ns):
                x[i] = x[i] + (dt / 6.0) * (k1[i] + 2.0 * k2[i]
                                            + 2.0 * k3[i] + k4[i])
            if (step + 1) % save_every == 0:
                bad = False
                for i in range(ns):
                    out[row, i] = x[i]
                    v = abs(x[i]) * inv_base[i]
                    if v > div_limit or not math.isfinite(v):
                        bad = True
                row += 1
                if bad:
                    return row, 1
        return row, 0
else:  # pragma: no cover
    rhs_jit = None
    rk4_jit = None


def active_flavor():
    return "numpy" if (NUMBA_DISABLED or not HAVE_NUMBA) else "numba"


def rhs_default():
    """The rhs evaluator selected by the environment flag."""
    if active_flavor() == "numba":
        return rhs_jit
    return rhs_numpy


def rk4_default():
    if active_flavor() == "numba":
        return rk4_jit
    return rk4_numpy
