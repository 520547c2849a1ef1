"""Eigen-analysis: modes, participation factors and classification.

All eigen-computations run on the per-unit state matrix; participation
factors are invariant under that diagonal scaling.  Left eigenvectors are
normalized so y_k^T x_k = 1, which makes every participation column sum
to exactly one.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import NumericalError
from .indexing import (CONTROLLER_STATES, ELECTRICAL_STATES, TERMINAL_STATES,
                       N_TERM_STATES)

LOCAL = "LOCAL"
INTER_AREA = "INTER_AREA"
CONTROL = "CONTROL"
ELECTRICAL = "ELECTRICAL"


@dataclass
class ModeSet:
    """Eigenstructure of a linear model, sorted by (Re desc, |Im| asc)."""

    eigenvalues: np.ndarray   # complex, rad/s
    right: np.ndarray         # columns x_k (pu coordinates)
    left: np.ndarray          # columns y_k with y_k^T x_k = 1
    zeta: np.ndarray
    freq_hz: np.ndarray
    index: object
    norm_a: float

    @property
    def n_modes(self):
        return self.eigenvalues.size

    def conjugate_representatives(self):
        """Indices keeping the positive-imaginary member of each pair."""
        return [k for k, lam in enumerate(self.eigenvalues) if lam.imag >= 0]


def damping_factor(lam):
    """zeta = -Re(lam) / |lam|."""
    lam = complex(lam)
    if lam == 0:
        raise NumericalError("damping factor undefined for lambda = 0")
    return -lam.real / abs(lam)


def eigen_decompose(model):
    """Full nonsymmetric eigendecomposition with left/right vectors."""
    a = np.asarray(model.A, dtype=float)
    if not np.isfinite(a).all():
        raise NumericalError("state matrix contains non-finite entries")
    try:
        w, vl, vr = scipy.linalg.eig(a, left=True, right=True)
    except scipy.linalg.LinAlgError as exc:  # pragma: no cover
        raise NumericalError(
            f"eigensolver failure: {exc}; cond(A) = {np.linalg.cond(a):.3e}")
    order = np.lexsort((-np.sign(w.imag), np.abs(w.imag), -w.real))
    w = w[order]
    vr = vr[:, order]
    vl = vl[:, order]

    norm_a = float(np.linalg.norm(a, 2))
    left = np.empty_like(vr)
    for k in range(w.size):
        y = np.conj(vl[:, k])           # y^T A = lam y^T
        s = y @ vr[:, k]
        if abs(s) < 1e-300:
            raise NumericalError(
                f"left/right eigenvector pair {k} is (numerically) "
                "orthogonal; eigenvalue may be defective")
        left[:, k] = y / s

    zeta = np.array([damping_factor(l) if l != 0 else np.nan for l in w])
    freq = np.abs(w.imag) / (2.0 * np.pi)
    ms = ModeSet(eigenvalues=w, right=vr, left=left, zeta=zeta, freq_hz=freq,
                 index=model.index, norm_a=norm_a)
    _check_residuals(a, ms)
    return ms


def _check_residuals(a, ms, tol=1e-8):
    for k in range(ms.n_modes):
        lam, x, y = ms.eigenvalues[k], ms.right[:, k], ms.left[:, k]
        r_right = np.linalg.norm(a @ x - lam * x)
        r_left = np.linalg.norm(y @ a - lam * y) / max(np.linalg.norm(y), 1e-300)
        if r_right > tol * ms.norm_a or r_left > tol * ms.norm_a:
            raise NumericalError(
                f"eigenpair {k} residual exceeds {tol:.0e}*||A|| "
                f"(right {r_right:.2e}, left {r_left:.2e}, "
                f"||A|| {ms.norm_a:.2e})")


def participation_matrix(modes):
    """Complex participation P[state, mode] = y_k[state] * x_k[state].

    Returns (P, P_display); each display column is scaled so its largest
    magnitude is one.
    """
    P = modes.left * modes.right
    mags = np.abs(P)
    peak = mags.max(axis=0)
    peak[peak == 0] = 1.0
    return P, mags / peak[None, :]


def aggregate_by_terminal(P, index):
    """Sum complex participation per terminal, plus a DC pseudo-terminal.

    The cable-current states are grouped as the extra last row so the
    aggregates of every mode still sum to exactly one.
    """
    nt = index.n_terminals
    agg = np.empty((nt + 1, P.shape[1]), dtype=complex)
    for n in range(nt):
        agg[n] = P[N_TERM_STATES * n:N_TERM_STATES * (n + 1)].sum(axis=0)
    agg[nt] = P[N_TERM_STATES * nt:].sum(axis=0)
    labels = list(index.terminal_ids) + ["DC"]
    return agg, labels


@dataclass
class ModeClassification:
    mode: int
    kind: str                  # LOCAL / INTER_AREA
    nature: str                # CONTROL / ELECTRICAL
    dominant_terminals: list
    dominated: bool            # any terminal above threshold
    label: str                 # LCM / ICM / "" for electrical modes
    lcm_condition: bool        # literal approximate-equality conditions
    icm_condition: bool
    terminal_participation: dict = field(default_factory=dict)


def _rel_close(a, b, tol):
    m = max(abs(a), abs(b))
    if m == 0:
        return True
    return abs(a - b) / m <= tol


def classify_modes(modes, terminal_participation, P, index,
                   threshold=0.3, tol=0.3):
    """Local / inter-area and control / electrical classification.

    Dominance uses the real part of the aggregated complex participation
    (threshold 0.3); a mode with two or more dominant terminals is
    inter-area.  Nature compares summed |participation| of controller
    states against electrical states within the dominant terminals.
    """
    agg, labels = terminal_participation
    nt = index.n_terminals
    out = []
    ctrl_off = [TERMINAL_STATES.index(s) for s in CONTROLLER_STATES]
    elec_off = [TERMINAL_STATES.index(s) for s in ELECTRICAL_STATES]

    for k in range(modes.n_modes):
        re_agg = agg[:nt, k].real
        dom = [labels[n] for n in range(nt) if re_agg[n] >= threshold]
        kind = INTER_AREA if len(dom) >= 2 else LOCAL
        look_at = dom if dom else [labels[int(np.argmax(re_agg))]]

        ctrl_mag = elec_mag = 0.0
        for tid in look_at:
            n = index.terminal_ids.index(tid)
            block = P[N_TERM_STATES * n:N_TERM_STATES * (n + 1), k]
            ctrl_mag += float(np.abs(block[ctrl_off]).sum())
            elec_mag += float(np.abs(block[elec_off]).sum())
        nature = CONTROL if ctrl_mag > elec_mag else ELECTRICAL

        lcm_cond = False
        if len(look_at) == 1:
            n = index.terminal_ids.index(look_at[0])
            blk = np.abs(P[N_TERM_STATES * n:N_TERM_STATES * (n + 1), k])
            gp = blk[TERMINAL_STATES.index("gamma_p")]
            gq = blk[TERMINAL_STATES.index("gamma_q")]
            om = blk[TERMINAL_STATES.index("omega")]
            th = blk[TERMINAL_STATES.index("theta_pll")]
            lcm_cond = (_rel_close(gp, om, tol) and _rel_close(gp, th, tol)
                        and _rel_close(gq, om, tol) and _rel_close(gq, th, tol))
        icm_cond = False
        if len(dom) >= 2:
            vals = [agg[labels.index(t), k].real for t in dom]
            icm_cond = all(_rel_close(vals[0], v, tol) for v in vals[1:])

        label = ""
        if nature == CONTROL:
            label = "ICM" if kind == INTER_AREA else "LCM"
        out.append(ModeClassification(
            mode=k, kind=kind, nature=nature, dominant_terminals=dom,
            dominated=bool(dom), label=label, lcm_condition=lcm_cond,
            icm_condition=icm_cond,
            terminal_participation={labels[n]: complex(agg[n, k])
                                    for n in range(nt + 1)}))
    return out


def dominant_modes(modes, zeta_max=0.15, re_max=200.0, f_min=2.0):
    """Poorly damped oscillatory modes near the imaginary axis.

    One representative per conjugate pair (positive imaginary part).
    """
    keep = []
    for k, lam in enumerate(modes.eigenvalues):
        if lam.imag <= 0:
            continue
        if modes.freq_hz[k] < f_min:
            continue
        if abs(lam.real) >= re_max:
            continue
        if modes.zeta[k] >= zeta_max:
            continue
        keep.append(k)
    return keep
