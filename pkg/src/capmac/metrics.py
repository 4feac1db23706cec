"""Latency and energy models for the in-sensor MAC,
plus waveform table assembly from captured phase traces.

Latency is purely structural (phase durations times scheduled array cycles).
Energy has two modes: `calibrated` reproduces the measured per-classification
figure, `charge_based` sums |Q_n * V_n| over the charging phase as a
physically motivated lower-bound estimate.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

from .arrays import ArrayTopology, resource_report
from .device import MacPhase, PHASE_ORDER, SWITCH_NAMES, phase_switches
from .netlab import NetworkSpec

# Measured figures for one 4-bank FC classification cycle.
DEFAULT_CYCLE_NS = 350.0
DEFAULT_ENERGY_NJ = 0.9


@dataclass(frozen=True)
class PhaseTiming:
    """Durations (ns) of the four MAC phases; defaults split the measured
    350 ns cycle evenly."""

    t_clear: float = DEFAULT_CYCLE_NS / 4
    t_charge: float = DEFAULT_CYCLE_NS / 4
    t_transfer: float = DEFAULT_CYCLE_NS / 4
    t_sum: float = DEFAULT_CYCLE_NS / 4

    def __post_init__(self):
        if min(self.t_clear, self.t_charge, self.t_transfer, self.t_sum) <= 0:
            raise ValueError("phase durations must be positive")

    @property
    def durations(self):
        return (self.t_clear, self.t_charge, self.t_transfer, self.t_sum)

    @property
    def total(self) -> float:
        return self.t_clear + self.t_charge + self.t_transfer + self.t_sum


@dataclass(frozen=True)
class EnergyModel:
    mode: str = "calibrated"            # "calibrated" | "charge_based"
    e_per_classification: float = DEFAULT_ENERGY_NJ   # nJ, calibrated mode
    supply_v: float = 1.0               # reference for charge_based mode

    def __post_init__(self):
        if self.mode not in ("calibrated", "charge_based"):
            raise ValueError(f"unknown energy mode: {self.mode!r}")


def cycle_count(net: NetworkSpec, topology: ArrayTopology) -> int:
    """Sequential array cycles per inference: ceil(M/banks) for FC readout,
    one horizontal schedule step per cycle for convolution."""
    if net.architecture in ("fc_classifier", "autoencoder"):
        return math.ceil(net.outputs / topology.banks)
    if net.architecture == "cnn_classifier":
        return net.cols - net.kernel + 1
    raise ValueError(f"unknown architecture: {net.architecture!r}")


def latency(net: NetworkSpec, timing: PhaseTiming, topology: ArrayTopology) -> float:
    """Total nanoseconds: (sum of phase durations) x (scheduled cycles).
    Independent of weight values."""
    return timing.total * cycle_count(net, topology)


def energy(model: EnergyModel, net: NetworkSpec | None = None,
           topology: ArrayTopology | None = None, trace=None) -> float:
    """Energy in nJ for one inference.

    calibrated: e_per_classification scaled by the cycle count (needs net
    and topology). charge_based: sum of |Q_n * V_n| over the charge-phase
    records of a captured trace (needs trace); 1 pC*V = 1 pJ = 1e-3 nJ.
    """
    if model.mode == "calibrated":
        if net is None or topology is None:
            raise ValueError("calibrated mode needs a network spec and topology")
        return model.e_per_classification * cycle_count(net, topology)
    if trace is None:
        raise ValueError("charge_based mode needs a captured MAC trace")
    picojoule = sum(abs(rec.charge_pc * rec.voltage_v)
                    for rec in _flatten(trace) if rec.phase == MacPhase.CHARGE)
    return picojoule / 1000.0


def _flatten(trace):
    # Accept a single device trace or a list of per-bank traces.
    if trace and isinstance(trace[0], list):
        for bank in trace:
            yield from bank
    else:
        yield from trace


def assemble_waveform(traces, timing: PhaseTiming):
    """Build a timed (time_ns, signal, value) table from per-bank MAC traces.

    Signals are the four switch levels plus U_1..U_M; every signal is
    piecewise constant per phase, U_m becomes the bank's summed output at the
    start of the summation phase and the final values equal fc_forward's
    outputs exactly.
    """
    if not traces or not traces[0]:
        raise ValueError("empty trace; capture one with fc_forward(traces=[])")
    banks = [{rec.phase: rec for rec in bank} for bank in traces]
    starts = []
    t = 0.0
    for dur in timing.durations:
        starts.append(t)
        t += dur
    rows = []
    for phase, t0 in zip(PHASE_ORDER, starts):
        levels = phase_switches(phase)
        for name, level in zip(SWITCH_NAMES, levels):
            rows.append((t0, name, float(level)))
        for m, bank in enumerate(banks):
            u = bank[MacPhase.SUM].voltage_v if phase == MacPhase.SUM else 0.0
            rows.append((t0, f"U{m + 1}", u))
    # Close the cycle: repeat final levels at t_total for plotting.
    for name, level in zip(SWITCH_NAMES, phase_switches(MacPhase.SUM)):
        rows.append((timing.total, name, float(level)))
    for m, bank in enumerate(banks):
        rows.append((timing.total, f"U{m + 1}", bank[MacPhase.SUM].voltage_v))
    return rows


def waveform_final_outputs(rows) -> list[float]:
    """The last value of each U_m signal in a waveform table."""
    finals = {}
    for t, signal, value in rows:
        if signal.startswith("U"):
            finals[signal] = value
    return [finals[f"U{m + 1}"] for m in range(len(finals))]


def write_waveform_csv(rows, path):
    lines = ["time_ns,signal,value"]
    for t, signal, value in rows:
        lines.append(f"{t!r},{signal},{value!r}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def summary(net: NetworkSpec, timing: PhaseTiming, topology: ArrayTopology,
            model: EnergyModel) -> dict:
    """Metrics JSON bundle: latency, energy, cycles and converter counts."""
    cycles = cycle_count(net, topology)
    if net.architecture == "cnn_classifier":
        dacs, adcs, _ = resource_report(net.rows, net.cols, net.kernel)
    else:
        # FC wiring: one DAC per (bank, pixel) voltage, one ADC per bank.
        dacs = topology.banks * net.rows * net.cols
        adcs = topology.banks
    return {
        "architecture": net.architecture,
        "latency_ns": latency(net, timing, topology),
        "energy_nJ": energy(model, net=net, topology=topology)
        if model.mode == "calibrated" else None,
        "cycles": cycles,
        "dacs": dacs,
        "adcs": adcs,
    }


def write_summary_json(data: dict, path):
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")
