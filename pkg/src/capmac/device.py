"""Single capacitive pixel: induced series capacitance and the four-phase
charge-domain multiply-accumulate unit.

Units are pF for capacitance, V for voltage and pC for charge throughout
(pF * V = pC), so no unit conversions appear in the math.

The switch model is behavioral: transmission gates are ideal, with no charge
injection, leakage or RC settling.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

# Paper operating point: C0 = 72 pF sensor cap, touched / untouched pixel
# induced capacitances 500 / 16.77 pF, 20% rms capacitance noise.
DEFAULT_C0 = 72.0
DEFAULT_C_IH = 500.0
DEFAULT_C_IL = 16.77
DEFAULT_NOISE_FRAC = 0.2

# Gaussian noise can push a capacitance through zero; the series formula
# needs a strictly positive value.
NOISE_FLOOR_PF = 0.01

# Default per-phase duration (ns); four equal phases summing to 350 ns.
DEFAULT_PHASE_NS = 87.5


class MacPhase(enum.Enum):
    """The four phases of one MAC cycle, in execution order."""

    CLEAR = "clear"
    CHARGE = "charge"
    TRANSFER = "transfer"
    SUM = "sum"


PHASE_ORDER = (MacPhase.CLEAR, MacPhase.CHARGE, MacPhase.TRANSFER, MacPhase.SUM)

# Switch levels (CL, MUL, CON, ADD) asserted during each phase.
_PHASE_SWITCHES = {
    MacPhase.CLEAR: (True, False, True, True),
    MacPhase.CHARGE: (False, True, False, False),
    MacPhase.TRANSFER: (False, False, True, False),
    MacPhase.SUM: (False, False, True, True),
}

SWITCH_NAMES = ("CL", "MUL", "CON", "ADD")


def phase_switches(phase: MacPhase) -> tuple[bool, bool, bool, bool]:
    """Return the (CL, MUL, CON, ADD) switch levels for a phase."""
    return _PHASE_SWITCHES[phase]


@dataclass(frozen=True)
class SensorParams:
    """Fixed electrical parameters of the sensor array.

    noise_mode selects the sigma reference for capacitance noise:
    "per_class" uses each pixel's own clean value (c_ih or c_il),
    "global" uses c_ih for every pixel.
    """

    c0: float = DEFAULT_C0
    c_ih: float = DEFAULT_C_IH
    c_il: float = DEFAULT_C_IL
    noise_frac: float = DEFAULT_NOISE_FRAC
    noise_mode: str = "per_class"

    def __post_init__(self):
        if self.c0 <= 0 or self.c_ih <= 0 or self.c_il <= 0:
            raise ValueError("capacitances must be positive")
        if self.c_ih <= self.c_il:
            raise ValueError("c_ih must exceed c_il")
        if self.noise_frac < 0:
            raise ValueError("noise_frac must be >= 0")
        if self.noise_mode not in ("per_class", "global"):
            raise ValueError(f"unknown noise_mode: {self.noise_mode!r}")


@dataclass(frozen=True)
class PixelCap:
    """A pixel's induced capacitance and the resulting series capacitance."""

    c_i: float
    c_series: float

    @classmethod
    def from_induced(cls, c_i: float, c0: float = DEFAULT_C0) -> "PixelCap":
        return cls(c_i=float(c_i), c_series=float(series_capacitance(c_i, c0)))


def series_capacitance(c_i, c0):
    """Series combination c_i*c0/(c_i + c0) of the induced and sensor caps.

    Accepts scalars or arrays; the result is strictly below both inputs.
    Raises ValueError for non-positive capacitance.
    """
    c_i = np.asarray(c_i, dtype=float)
    if np.any(c_i <= 0) or c0 <= 0:
        raise ValueError("capacitances must be positive")
    out = c_i * c0 / (c_i + c0)
    return float(out) if out.ndim == 0 else out


def apply_noise(c_i_clean, nominal, noise_frac, rng):
    """Add Gaussian capacitance noise with sigma = noise_frac * nominal.

    `nominal` is the clean class value the rms noise is referenced to
    (broadcast against c_i_clean). Results are clamped at NOISE_FLOOR_PF so
    the series formula stays defined. Deterministic for a seeded rng.
    """
    if noise_frac < 0:
        raise ValueError("noise_frac must be >= 0")
    c_i_clean = np.asarray(c_i_clean, dtype=float)
    if noise_frac == 0:
        out = c_i_clean.copy()
    else:
        delta = rng.standard_normal(c_i_clean.shape) * (noise_frac * np.asarray(nominal, dtype=float))
        out = np.maximum(c_i_clean + delta, NOISE_FLOOR_PF)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class TraceRecord:
    """State of one MAC unit at the end of one phase."""

    unit: int
    phase: MacPhase
    cl: bool
    mul: bool
    con: bool
    add: bool
    charge_pc: float
    voltage_v: float


@dataclass
class MacUnitState:
    """Charge state and switch settings of a single MAC unit."""

    phase: MacPhase = MacPhase.CLEAR
    switches: tuple = _PHASE_SWITCHES[MacPhase.CLEAR]
    stored_charge: float = 0.0  # pC
    plate_voltage: float = 0.0  # V

    def enter(self, phase: MacPhase):
        self.phase = phase
        self.switches = _PHASE_SWITCHES[phase]


def mac_evaluate(c_series, v, c0: float = DEFAULT_C0, trace: list | None = None) -> float:
    """Charge-domain MAC: sum(c_n * v_n) / (N * c0) through the phase machine.

    c_series are the N series capacitances seen by the units, v the N weight
    voltages (|v_n| <= 1, the pre-normalized programming range). The four
    phases run explicitly so the intermediate charge Q_n = c_n*v_n and plate
    voltage U_o,n = Q_n/c0 are observable; pass a list as `trace` to capture
    one TraceRecord per unit per phase.
    """
    c = [float(x) for x in c_series]
    w = [float(x) for x in v]
    if len(c) != len(w):
        raise ValueError(f"length mismatch: {len(c)} capacitances vs {len(w)} weights")
    if len(c) < 1:
        raise ValueError("need at least one unit")
    if c0 <= 0 or any(x <= 0 for x in c):
        raise ValueError("capacitances must be positive")
    if any(abs(x) > 1.0 for x in w):
        raise ValueError("weight voltage outside [-1, 1]; normalize weights first")

    n = len(c)
    units = [MacUnitState() for _ in range(n)]

    def record(i, unit):
        if trace is not None:
            cl, mul, con, add = unit.switches
            trace.append(TraceRecord(i, unit.phase, cl, mul, con, add,
                                     unit.stored_charge, unit.plate_voltage))

    # Clear: residual charge drained through CL/CON/ADD.
    for i, unit in enumerate(units):
        unit.enter(MacPhase.CLEAR)
        unit.stored_charge = 0.0
        unit.plate_voltage = 0.0
        record(i, unit)
    # Charge: each series cap charged to its weight voltage, Q_n = c_n*v_n.
    for i, unit in enumerate(units):
        unit.enter(MacPhase.CHARGE)
        unit.stored_charge = c[i] * w[i]
        unit.plate_voltage = w[i]
        record(i, unit)
    # Transfer: cap switched to the fixed c0, plate settles at Q_n/c0.
    for i, unit in enumerate(units):
        unit.enter(MacPhase.TRANSFER)
        unit.plate_voltage = unit.stored_charge / c0
        record(i, unit)
    # Sum: N caps in parallel share charge; common plate at sum(Q)/(N*c0).
    u_out = math.fsum(unit.stored_charge for unit in units) / (n * c0)
    for i, unit in enumerate(units):
        unit.enter(MacPhase.SUM)
        unit.plate_voltage = u_out
        unit.stored_charge = c0 * u_out
        record(i, unit)
    return u_out


def trace_to_rows(trace, phase_ns=(DEFAULT_PHASE_NS,) * 4):
    """Flatten TraceRecords to CSV rows with phase start times attached."""
    starts = {}
    t = 0.0
    for phase, dur in zip(PHASE_ORDER, phase_ns):
        starts[phase] = t
        t += dur
    rows = []
    for rec in trace:
        rows.append((rec.unit, rec.phase.value, int(rec.cl), int(rec.mul),
                     int(rec.con), int(rec.add), rec.charge_pc, rec.voltage_v,
                     starts[rec.phase]))
    return rows


def write_trace_csv(trace, path, phase_ns=(DEFAULT_PHASE_NS,) * 4):
    """Export a captured MAC trace as CSV for waveform reconstruction."""
    lines = ["unit_index,phase,CL,MUL,CON,ADD,charge_pC,voltage_V,time_ns"]
    for row in trace_to_rows(trace, phase_ns):
        unit, phase, cl, mul, con, add, q, u, t = row
        lines.append(f"{unit},{phase},{cl},{mul},{con},{add},{q!r},{u!r},{t!r}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
