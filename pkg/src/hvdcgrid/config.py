"""Grid description: config parsing, domain types and validation.

Config files are INI-style with sections ``[system]``, ``[controllers]``,
``[terminal.<id>]`` and ``[cable.<k>]``.  Field units are fixed: MVA, MW,
MVAr, kV, Ohm, H, F, km, s.  Controller/filter settings in ``[controllers]``
apply to every terminal and can be overridden per terminal.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field, replace

from .errors import ConfigError, SpecValidationError

DC_VOLTAGE_Q = "DC_VOLTAGE_Q"
PQ = "PQ"

# Shipped defaults for controllers and measurement filters.  A minimal config
# only has to supply ratings, grid strength and setpoints.
CONTROLLER_DEFAULTS = {
    "tau_i": 1e-3,
    "k_p_pll": 10.0,
    "k_i_pll": 50.0,
    "k_p_p": 0.1,
    "k_i_p": 100.0,
    "k_p_q": 0.1,
    "k_i_q": 100.0,
    "k_p_dc": 2.25,
    "k_i_dc": 100.0,
    "t_mvd": 0.02,
    "t_mvq": 0.02,
    "t_mid": 0.0012,
    "t_miq": 0.0012,
    "t_vdc": 0.02,
}

_CONTROLLER_KEYS = set(CONTROLLER_DEFAULTS) | {"k_p_i", "k_i_i"}

_TERMINAL_KEYS = {
    "s_rated", "v_ac_base", "v_dc_base", "control_mode", "p_ref", "q_ref",
    "v_dc_ref", "scr", "r_g", "l_g", "v_grid_mag", "r_c", "l_c", "c_f",
    "c_vsc",
} | _CONTROLLER_KEYS

_CABLE_KEYS = {"from", "to", "length", "r_per_km", "l_per_km", "c_per_km"}

_SYSTEM_KEYS = {"frequency"}


@dataclass(frozen=True)
class ControllerGains:
    """PI gains for the inner, PLL, outer power/Q and DC-voltage loops.

    Inner gains are in SI (V per A, V per A-s); the other loops act on
    per-unit signals and emit per-unit current references.
    """

    k_p_i: float
    k_i_i: float
    k_p_pll: float
    k_i_pll: float
    k_p_p: float
    k_i_p: float
    k_p_q: float
    k_i_q: float
    k_p_dc: float
    k_i_dc: float


@dataclass(frozen=True)
class MeasurementFilters:
    """First-order measurement filter time constants (s)."""

    t_mvd: float
    t_mvq: float
    t_mid: float
    t_miq: float
    t_vdc: float


@dataclass(frozen=True)
class TerminalSpec:
    id: str
    s_rated: float            # MVA
    v_ac_base: float          # kV, line-line RMS
    v_dc_base: float          # kV, pole-to-pole
    control_mode: str         # DC_VOLTAGE_Q or PQ
    p_ref: float = 0.0        # MW, positive = rectification (AC -> DC)
    q_ref: float = 0.0        # MVAr, positive = injected into the AC grid
    v_dc_ref: float | None = None   # kV, required iff DC_VOLTAGE_Q
    scr: float | None = None
    r_g: float = 1.975        # Ohm
    l_g: float | None = None  # H; exactly one of scr / l_g
    v_grid_mag: float = 1.0   # pu of v_ac_base
    r_c: float = 0.225        # Ohm
    l_c: float = 0.0716       # H
    c_f: float = 3.12e-6      # F
    c_vsc: float = 66.66e-6   # F
    gains: ControllerGains = field(default=None)
    meas_filters: MeasurementFilters = field(default=None)

    @property
    def is_dvc(self):
        return self.control_mode == DC_VOLTAGE_Q


@dataclass(frozen=True)
class CableSpec:
    name: str
    from_t: str
    to_t: str
    length: float     # km
    r_per_km: float   # Ohm/km
    l_per_km: float   # H/km
    c_per_km: float   # F/km

    @property
    def r_total(self):
        return self.r_per_km * self.length

    @property
    def l_total(self):
        return self.l_per_km * self.length

    @property
    def c_total(self):
        return self.c_per_km * self.length


@dataclass(frozen=True)
class GridSpec:
    terminals: tuple
    cables: tuple
    system_frequency: float = 50.0

    def terminal(self, tid):
        for t in self.terminals:
            if t.id == tid:
                return t
        raise KeyError(f"no terminal {tid!r}")

    def cable(self, name):
        for c in self.cables:
            if c.name == name:
                return c
        raise KeyError(f"no cable {name!r}")


class ValidatedGridSpec(GridSpec):
    """GridSpec that has passed :func:`validate_spec`."""


def scr_to_impedance(scr, s_rated, v_ac_base, r_g, f):
    """Grid inductance (H) from a short-circuit ratio.

    ``|Z| = V^2 / (scr * S)`` with V in kV line-line and S in MVA; the
    reactance is what remains after removing the resistive part.
    """
    if scr <= 0:
        raise ConfigError(f"scr must be > 0, got {scr}")
    z = (v_ac_base * 1e3) ** 2 / (scr * s_rated * 1e6)
    x_sq = z * z - r_g * r_g
    if x_sq <= 0:
        raise ConfigError(
            f"r_g = {r_g} Ohm exceeds the total grid impedance "
            f"{z:.4g} Ohm implied by scr = {scr}")
    return math.sqrt(x_sq) / (2.0 * math.pi * f)


def _get_float(section, key, raw):
    try:
        return float(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"[{section}] {key}: expected a number, got {raw!r}")


def _resolve_gains(base, overrides, section, l_c, r_c):
    vals = dict(base)
    vals.update(overrides)
    if "k_p_i" in vals or "k_i_i" in vals:
        if not ("k_p_i" in vals and "k_i_i" in vals):
            raise ConfigError(
                f"[{section}] k_p_i and k_i_i must be given together")
        k_p_i, k_i_i = vals["k_p_i"], vals["k_i_i"]
    else:
        tau = vals["tau_i"]
        if tau <= 0:
            raise ConfigError(f"[{section}] tau_i must be > 0, got {tau}")
        k_p_i, k_i_i = l_c / tau, r_c / tau
    gains = ControllerGains(
        k_p_i=k_p_i, k_i_i=k_i_i,
        k_p_pll=vals["k_p_pll"], k_i_pll=vals["k_i_pll"],
        k_p_p=vals["k_p_p"], k_i_p=vals["k_i_p"],
        k_p_q=vals["k_p_q"], k_i_q=vals["k_i_q"],
        k_p_dc=vals["k_p_dc"], k_i_dc=vals["k_i_dc"])
    filts = MeasurementFilters(
        t_mvd=vals["t_mvd"], t_mvq=vals["t_mvq"],
        t_mid=vals["t_mid"], t_miq=vals["t_miq"], t_vdc=vals["t_vdc"])
    return gains, filts


def parse_grid_spec(text):
    """Parse a config document into a :class:`GridSpec`.

    Unknown sections or keys are rejected; defaults are filled in for
    everything optional.
    """
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"),
                                   interpolation=None, strict=True)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config parse error: {exc}") from None

    frequency = 50.0
    controller_base = dict(CONTROLLER_DEFAULTS)
    terminals = []
    cables = []

    for section in cp.sections():
        items = dict(cp.items(section))
        if section == "system":
            unknown = set(items) - _SYSTEM_KEYS
            if unknown:
                raise ConfigError(f"[system] unknown keys: {sorted(unknown)}")
            if "frequency" in items:
                frequency = _get_float(section, "frequency", items["frequency"])
        elif section == "controllers":
            unknown = set(items) - _CONTROLLER_KEYS
            if unknown:
                raise ConfigError(
                    f"[controllers] unknown keys: {sorted(unknown)}")
            for k, v in items.items():
                controller_base[k] = _get_float(section, k, v)
        elif section.startswith("terminal."):
            tid = section.split(".", 1)[1]
            unknown = set(items) - _TERMINAL_KEYS
            if unknown:
                raise ConfigError(f"[{section}] unknown keys: {sorted(unknown)}")
            terminals.append((tid, section, items))
        elif section.startswith("cable."):
            name = section.split(".", 1)[1]
            unknown = set(items) - _CABLE_KEYS
            if unknown:
                raise ConfigError(f"[{section}] unknown keys: {sorted(unknown)}")
            cables.append((name, section, items))
        else:
            raise ConfigError(f"unknown section [{section}]")

    term_specs = []
    for tid, section, items in terminals:
        def need(key, _items=items, _section=section):
            if key not in _items:
                raise ConfigError(f"[{_section}] missing mandatory field {key!r}")
            return _get_float(_section, key, _items[key])

        mode_raw = items.get("control_mode")
        if mode_raw is None:
            raise ConfigError(f"[{section}] missing mandatory field 'control_mode'")
        mode = mode_raw.strip().upper()
        if mode not in (DC_VOLTAGE_Q, PQ):
            raise ConfigError(
                f"[{section}] control_mode must be dc_voltage_q or pq, "
                f"got {mode_raw!r}")

        overrides = {k: _get_float(section, k, v)
                     for k, v in items.items() if k in _CONTROLLER_KEYS}
        l_c = _get_float(section, "l_c", items.get("l_c", 0.0716))
        r_c = _get_float(section, "r_c", items.get("r_c", 0.225))
        gains, filts = _resolve_gains(controller_base, overrides, section, l_c, r_c)

        term_specs.append(TerminalSpec(
            id=tid,
            s_rated=need("s_rated"),
            v_ac_base=need("v_ac_base"),
            v_dc_base=need("v_dc_base"),
            control_mode=mode,
            p_ref=_get_float(section, "p_ref", items.get("p_ref", 0.0)),
            q_ref=_get_float(section, "q_ref", items.get("q_ref", 0.0)),
            v_dc_ref=(_get_float(section, "v_dc_ref", items["v_dc_ref"])
                      if "v_dc_ref" in items else None),
            scr=(_get_float(section, "scr", items["scr"])
                 if "scr" in items else None),
            r_g=_get_float(section, "r_g", items.get("r_g", 1.975)),
            l_g=(_get_float(section, "l_g", items["l_g"])
                 if "l_g" in items else None),
            v_grid_mag=_get_float(section, "v_grid_mag",
                                  items.get("v_grid_mag", 1.0)),
            r_c=r_c, l_c=l_c,
            c_f=_get_float(section, "c_f", items.get("c_f", 3.12e-6)),
            c_vsc=_get_float(section, "c_vsc", items.get("c_vsc", 66.66e-6)),
            gains=gains, meas_filters=filts))

    cable_specs = []
    for name, section, items in cables:
        for key in ("from", "to"):
            if key not in items:
                raise ConfigError(f"[{section}] missing mandatory field {key!r}")

        def needc(key, _items=items, _section=section):
            if key not in _items:
                raise ConfigError(f"[{_section}] missing mandatory field {key!r}")
            return _get_float(_section, key, _items[key])

        cable_specs.append(CableSpec(
            name=name, from_t=items["from"].strip(), to_t=items["to"].strip(),
            length=needc("length"), r_per_km=needc("r_per_km"),
            l_per_km=needc("l_per_km"), c_per_km=needc("c_per_km")))

    return GridSpec(terminals=tuple(term_specs), cables=tuple(cable_specs),
                    system_frequency=frequency)


def load_grid_spec(path):
    with open(path, "r", encoding="utf-8") as fh:
        return parse_grid_spec(fh.read())


def resolved_l_g(term, frequency):
    """Grid inductance in H, converting from SCR when needed."""
    if term.l_g is not None:
        return term.l_g
    return scr_to_impedance(term.scr, term.s_rated, term.v_ac_base,
                            term.r_g, frequency)


def validate_spec(spec):
    """Check every GridSpec invariant; return a ValidatedGridSpec.

    All violations are collected and reported together.
    """
    bad = []
    ids = [t.id for t in spec.terminals]
    if len(spec.terminals) < 2:
        bad.append(f"need >= 2 terminals, got {len(spec.terminals)}")
    if len(set(ids)) != len(ids):
        bad.append("duplicate terminal ids")
    if spec.system_frequency <= 0:
        bad.append(f"system_frequency must be > 0, got {spec.system_frequency}")

    dvc = [t.id for t in spec.terminals if t.is_dvc]
    if len(dvc) == 0:
        bad.append("no DC-voltage-controlling terminal")
    elif len(dvc) > 1:
        bad.append(f"more than one DC-voltage-controlling terminal: {dvc}")

    for t in spec.terminals:
        where = f"terminal {t.id}"
        for name in ("s_rated", "v_ac_base", "v_dc_base"):
            if getattr(t, name) <= 0:
                bad.append(f"{where}: {name} must be > 0")
        if (t.scr is None) == (t.l_g is None):
            bad.append(f"{where}: exactly one of scr / l_g must be supplied")
        elif t.scr is not None:
            try:
                scr_to_impedance(t.scr, t.s_rated, t.v_ac_base, t.r_g,
                                 spec.system_frequency)
            except ConfigError as exc:
                bad.append(f"{where}: {exc}")
        elif t.l_g <= 0:
            bad.append(f"{where}: l_g must be > 0")
        if t.r_g < 0:
            bad.append(f"{where}: r_g must be >= 0")
        if t.l_c <= 0:
            bad.append(f"{where}: l_c must be > 0")
        if t.c_f <= 0:
            bad.append(f"{where}: c_f must be > 0")
        if t.c_vsc <= 0:
            bad.append(f"{where}: c_vsc must be > 0")
        if t.v_grid_mag <= 0:
            bad.append(f"{where}: v_grid_mag must be > 0")
        if abs(t.p_ref) > t.s_rated:
            bad.append(f"{where}: |p_ref| = {abs(t.p_ref)} MW exceeds "
                       f"s_rated = {t.s_rated} MVA")
        if t.is_dvc and t.v_dc_ref is None:
            bad.append(f"{where}: v_dc_ref required for dc_voltage_q mode")
        if t.is_dvc and t.v_dc_ref is not None and t.v_dc_ref <= 0:
            bad.append(f"{where}: v_dc_ref must be > 0")
        for gname in ("k_p_i", "k_i_i", "k_p_pll", "k_i_pll", "k_p_p",
                      "k_i_p", "k_p_q", "k_i_q", "k_p_dc", "k_i_dc"):
            if getattr(t.gains, gname) < 0:
                bad.append(f"{where}: gain {gname} must be >= 0")
        for fname in ("t_mvd", "t_mvq", "t_mid", "t_miq", "t_vdc"):
            if getattr(t.meas_filters, fname) <= 0:
                bad.append(f"{where}: filter {fname} must be > 0")

    seen_pairs = {}
    for c in spec.cables:
        where = f"cable {c.name}"
        if c.from_t == c.to_t:
            bad.append(f"{where}: from == to ({c.from_t})")
        for end in (c.from_t, c.to_t):
            if end not in ids:
                bad.append(f"{where}: endpoint {end!r} is not a declared terminal")
        pair = frozenset((c.from_t, c.to_t))
        if pair in seen_pairs:
            bad.append(f"{where}: duplicate cable between {c.from_t} and "
                       f"{c.to_t} (already declared as {seen_pairs[pair]})")
        else:
            seen_pairs[pair] = c.name
        if c.length <= 0:
            bad.append(f"{where}: length must be > 0")
        for name in ("r_per_km", "l_per_km", "c_per_km"):
            if getattr(c, name) <= 0:
                bad.append(f"{where}: {name} must be > 0")

    # Connectivity by BFS over the cable graph.
    if not bad and ids:
        adj = {i: set() for i in ids}
        for c in spec.cables:
            adj[c.from_t].add(c.to_t)
            adj[c.to_t].add(c.from_t)
        comps = []
        unseen = set(ids)
        while unseen:
            start = min(unseen)
            comp, stack = set(), [start]
            while stack:
                node = stack.pop()
                if node in comp:
                    continue
                comp.add(node)
                stack.extend(adj[node] - comp)
            comps.append(sorted(comp))
            unseen -= comp
        if len(comps) > 1:
            bad.append(f"cable graph is disconnected; components: {comps}")

    if bad:
        raise SpecValidationError(bad)
    return ValidatedGridSpec(terminals=spec.terminals, cables=spec.cables,
                             system_frequency=spec.system_frequency)


def with_terminal(spec, tid, **changes):
    """Copy of a spec with one terminal's fields replaced."""
    terms = tuple(replace(t, **changes) if t.id == tid else t
                  for t in spec.terminals)
    cls = type(spec)
    return cls(terminals=terms, cables=spec.cables,
               system_frequency=spec.system_frequency)


def with_cable(spec, name, **changes):
    cabs = tuple(replace(c, **changes) if c.name == name else c
                 for c in spec.cables)
    cls = type(spec)
    return cls(terminals=spec.terminals, cables=cabs,
               system_frequency=spec.system_frequency)
