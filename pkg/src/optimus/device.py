"""Deterministic simulated multi-qubit device.

Truth parameters are hidden from the engine; the only way to learn about them
is to run scans.  Drift moves the truth, faults corrupt what we *believe*
(stored parameters), keeping "the world changed" separate from "our knowledge
is wrong".

Units: frequencies in GHz, Rabi rates in MHz, durations in ns, clock in s.
"""

from __future__ import annotations

import json
import math
from collections.abc import Mapping
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Any

import numpy as np
from scipy.stats import norm

from .errors import ConfigError, UnknownQubit, UnknownTarget

if TYPE_CHECKING:
    from .state import StateStore

DEFAULT_EXPERIMENT_COST_S = 1e-4


@dataclass
class QubitTruth:
    label: str
    f_q: float  # GHz
    rabi_rate: float  # MHz, Omega/2pi at the reference drive amplitude
    readout_centers: tuple[float, float] = (0.0, 4.0)
    readout_sigma: float = 1.0
    t2_like_decay: float = math.inf  # ns

    def __post_init__(self):
        if not self.rabi_rate > 0:
            raise ValueError("rabi_rate must be positive")
        if not self.readout_sigma > 0:
            raise ValueError("readout_sigma must be positive")

    @property
    def pi_length(self) -> float:
        """ns; pi_length * rabi_rate == 500 (ns * MHz)."""
        return 500.0 / self.rabi_rate

    @property
    def readout_sep_sigma(self) -> float:
        return (self.readout_centers[1] - self.readout_centers[0]) / self.readout_sigma

    @readout_sep_sigma.setter
    def readout_sep_sigma(self, value: float) -> None:
        c0 = self.readout_centers[0]
        self.readout_centers = (c0, c0 + value * self.readout_sigma)


# parameter names accepted by drift and jumps, mapped to QubitTruth attributes
TRUTH_PARAMS = {
    "f_q_ghz": "f_q",
    "rabi_rate_mhz": "rabi_rate",
    "readout_sep_sigma": "readout_sep_sigma",
    "t2_ns": "t2_like_decay",
}


@dataclass(frozen=True)
class Jump:
    time: float
    qubit: str
    param: str
    delta: float


@dataclass
class DriftConfig:
    """Random-walk step per sqrt(virtual second) for each truth parameter."""

    steps: dict[str, float] = field(default_factory=dict)
    jumps: list[Jump] = field(default_factory=list)

    def __post_init__(self):
        for name, step in self.steps.items():
            if name not in TRUTH_PARAMS:
                raise ValueError(f"cannot drift unknown parameter {name!r}")
            if step < 0:
                raise ValueError("drift steps must be non-negative")


class VirtualClock:
    def __init__(self, now: float = 0.0, cost_per_shot: float = DEFAULT_EXPERIMENT_COST_S):
        self.now = float(now)
        self.cost_per_shot = float(cost_per_shot)

    def advance(self, dt: float) -> float:
        if dt < 0:
            raise ValueError("the clock only moves forwards")
        self.now += dt
        return self.now


@dataclass(frozen=True)
class ScanRequest:
    """A fully resolved scan: physical abscissa values plus control settings.

    ``kind`` selects the experiment: "readout" (points are prepared states),
    "spectroscopy" (drive frequencies), "rabi" (pulse durations, each repeated
    ``repeats`` times) or "two_qubit" (interaction times).  ``settings`` maps a
    qubit label to the stored control values the experiment uses.  The last
    qubit listed is the one measured.
    """

    kind: str
    qubits: tuple[str, ...]
    points: tuple[float, ...]
    shots: int
    settings: Mapping[str, Mapping[str, float]]
    repeats: int = 1


@dataclass
class ScanData:
    kind: str
    points: np.ndarray
    values: np.ndarray  # measured excited fraction per point
    shots: int
    repeats: int = 1
    raw: np.ndarray | None = None  # readout signal samples, shape (points, shots)

    def __len__(self) -> int:
        return len(self.points)


def excited_probability(truth: QubitTruth, drive_f: float, duration: float, repeats: int = 1) -> float:
    """Excited-state probability after ``repeats`` identical square pulses."""
    omega = 2 * math.pi * truth.rabi_rate * 1e-3  # rad/ns
    delta = 2 * math.pi * (drive_f - truth.f_q)  # rad/ns
    omega_eff = math.hypot(omega, delta)
    # identical pulses share a rotation axis, so the angles simply add
    p = (omega / omega_eff) ** 2 * math.sin(repeats * omega_eff * duration / 2) ** 2
    total = repeats * duration
    if math.isfinite(truth.t2_like_decay) and total > 0:
        p = 0.5 + (p - 0.5) * math.exp(-total / truth.t2_like_decay)
    return p


def spectroscopy_probability(truth: QubitTruth, drive_f: float) -> float:
    """Time-averaged excitation under a long drive: Lorentzian with HWHM = rabi_rate."""
    detuning_mhz = (drive_f - truth.f_q) * 1e3
    return 0.5 / (1.0 + (detuning_mhz / truth.rabi_rate) ** 2)


def assignment_errors(truth: QubitTruth, threshold: float) -> tuple[float, float]:
    """(P(read 1 | 0), P(read 0 | 1)) for a discriminator at ``threshold``."""
    c0, c1 = truth.readout_centers
    s = truth.readout_sigma
    return float(norm.sf((threshold - c0) / s)), float(norm.cdf((threshold - c1) / s))


class SimDevice:
    """Hidden truth + seeded RNG + virtual clock + experiment counter."""

    def __init__(
        self,
        qubits: list[QubitTruth],
        seed: int = 0,
        experiment_cost_s: float = DEFAULT_EXPERIMENT_COST_S,
        drift: DriftConfig | None = None,
        couplings: Mapping[tuple[str, str], float] | None = None,
    ):
        self.qubits = {q.label: q for q in qubits}
        self.rng = np.random.default_rng(seed)
        self.clock = VirtualClock(0.0, experiment_cost_s)
        self.drift = drift or DriftConfig()
        self.couplings = dict(couplings or {})  # (qa, qb) -> cz_time_ns
        self.experiments = 0
        self.flatlined: set[str] = set()
        self._drift_time = 0.0
        self._pending = sorted(self.drift.jumps, key=lambda j: j.time)
        for j in self._pending:
            self._truth(j.qubit)
            if j.param not in TRUTH_PARAMS:
                raise ValueError(f"cannot jump unknown parameter {j.param!r}")

    def _truth(self, label: str) -> QubitTruth:
        try:
            return self.qubits[label]
        except KeyError:
            raise UnknownQubit(label) from None

    def truth(self, label: str) -> QubitTruth:
        return self._truth(label)

    def cz_time(self, qa: str, qb: str) -> float:
        for key in ((qa, qb), (qb, qa)):
            if key in self.couplings:
                return self.couplings[key]
        raise UnknownQubit(f"{qa}-{qb}")

    # -- time ---------------------------------------------------------------

    def resume_at(self, now: float) -> None:
        """Start the clock at a previously saved virtual time (no drift applied)."""
        self.clock.now = float(now)
        self._drift_time = float(now)
        self._pending = [j for j in self._pending if j.time > now]

    def advance_and_drift(self, dt: float) -> None:
        self.clock.advance(dt)
        self._sync()

    def schedule_jump(self, jump: Jump) -> None:
        self._truth(jump.qubit)
        if jump.param not in TRUTH_PARAMS:
            raise ValueError(f"cannot jump unknown parameter {jump.param!r}")
        self._pending.append(jump)
        self._pending.sort(key=lambda j: j.time)
        self._sync()

    def _sync(self) -> None:
        """Apply drift and scheduled jumps for the window since the last sync."""
        now = self.clock.now
        window = now - self._drift_time
        if window > 0:
            for label in sorted(self.qubits):
                for name, step in self.drift.steps.items():
                    if step > 0:
                        self._shift(label, name, step * math.sqrt(window) * self.rng.standard_normal())
        while self._pending and self._pending[0].time <= now:
            j = self._pending.pop(0)
            self._shift(j.qubit, j.param, j.delta)
        self._drift_time = now

    def _shift(self, label: str, name: str, delta: float) -> None:
        truth = self._truth(label)
        attr = TRUTH_PARAMS[name]
        setattr(truth, attr, getattr(truth, attr) + delta)

    # -- measurement --------------------------------------------------------

    def _measure(self, label: str, p: float, shots: int, threshold: float) -> float:
        if label in self.flatlined:
            return self.rng.binomial(shots, 0.5) / shots
        e0, e1 = assignment_errors(self.qubits[label], threshold)
        p = min(max(p, 0.0), 1.0)
        n1 = self.rng.binomial(shots, p)
        ones = self.rng.binomial(n1, 1.0 - e1) + self.rng.binomial(shots - n1, e0)
        return ones / shots

    def execute_scan(self, request: ScanRequest) -> ScanData:
        for q in request.qubits:
            self._truth(q)
        self._sync()
        shots = int(request.shots)
        points = np.asarray(request.points, dtype=float)
        target = request.qubits[-1]
        settings = request.settings
        threshold = settings.get(target, {}).get("threshold")
        raw = None
        values = np.empty(len(points))
        truth = self.qubits[target]

        if request.kind == "readout":
            c, s = truth.readout_centers, truth.readout_sigma
            raw = np.empty((len(points), shots))
            for i, state in enumerate(points):
                raw[i] = self.rng.normal(c[int(round(state))], s, shots)
                values[i] = np.nan if threshold is None else float(np.mean(raw[i] > threshold))
        elif request.kind == "spectroscopy":
            for i, f in enumerate(points):
                values[i] = self._measure(target, spectroscopy_probability(truth, f), shots, threshold)
        elif request.kind == "rabi":
            drive = settings[target]["f_drive_ghz"]
            for i, t in enumerate(points):
                p = excited_probability(truth, drive, t, request.repeats)
                values[i] = self._measure(target, p, shots, threshold)
        elif request.kind == "two_qubit":
            control = request.qubits[0]
            pulse = 1.0
            for q in request.qubits:
                st = settings[q]
                pulse *= excited_probability(self.qubits[q], st["f_drive_ghz"], st["pi_length_ns"])
            cz = self.cz_time(control, target)
            for i, tau in enumerate(points):
                p = pulse * math.sin(math.pi * tau / (2 * cz)) ** 2
                values[i] = self._measure(target, p, shots, threshold)
        else:
            raise ValueError(f"unknown scan kind {request.kind!r}")

        self.experiments += len(points)
        self.clock.advance(len(points) * shots * self.clock.cost_per_shot)
        return ScanData(request.kind, points, values, shots, request.repeats, raw)


def inject_fault(device: SimDevice, store: StateStore | None, kind: str, *args: Any) -> None:
    """Apply a fault.

    ``corrupt_param(node, param, factor)`` scales a *stored* parameter (the
    truth is untouched).  ``flatline_readout(*qubits)`` randomises the
    state-discriminated outcome of the named qubits (all when none given) to
    50/50; raw reference histograms used by readout calibration are unaffected.
    """
    if kind == "corrupt_param":
        node, param, factor = args
        if store is None:
            raise UnknownTarget(node)
        try:
            store.corrupt_param(node, param, float(factor))
        except KeyError:
            raise UnknownTarget(f"{node}:{param}") from None
    elif kind == "flatline_readout":
        labels = list(args) or list(device.qubits)
        for q in labels:
            if q not in device.qubits:
                raise UnknownTarget(q)
        device.flatlined.update(labels)
    else:
        raise UnknownTarget(kind)


# -- config -----------------------------------------------------------------

_DEVICE_KEYS = {"seed", "experiment_cost_s", "qubits"}
_DEVICE_OPTIONAL = {"drift", "jumps", "couplings"}
_QUBIT_KEYS = {"label", "f_q_ghz", "rabi_rate_mhz", "readout_sep_sigma", "t2_us"}


def device_from_config(config: Any) -> SimDevice:
    def keys(obj, required, optional, where):
        if not isinstance(obj, dict):
            raise ConfigError(f"{where}: expected an object")
        missing, extra = required - obj.keys(), obj.keys() - required - optional
        if missing or extra:
            raise ConfigError(f"{where}: missing {sorted(missing)} / unknown {sorted(extra)} keys")

    keys(config, _DEVICE_KEYS, _DEVICE_OPTIONAL, "device config")
    try:
        qubits = []
        for i, q in enumerate(config["qubits"]):
            keys(q, _QUBIT_KEYS, set(), f"qubits[{i}]")
            t2 = q["t2_us"]
            qubits.append(QubitTruth(
                label=str(q["label"]),
                f_q=float(q["f_q_ghz"]),
                rabi_rate=float(q["rabi_rate_mhz"]),
                readout_centers=(0.0, float(q["readout_sep_sigma"])),
                readout_sigma=1.0,
                t2_like_decay=math.inf if not t2 else float(t2) * 1e3,
            ))
        jumps = []
        for i, j in enumerate(config.get("jumps", [])):
            keys(j, {"time", "qubit", "param", "delta"}, set(), f"jumps[{i}]")
            jumps.append(Jump(float(j["time"]), str(j["qubit"]), str(j["param"]), float(j["delta"])))
        couplings = {}
        for i, c in enumerate(config.get("couplings", [])):
            keys(c, {"qubits", "cz_time_ns"}, set(), f"couplings[{i}]")
            qa, qb = c["qubits"]
            couplings[(str(qa), str(qb))] = float(c["cz_time_ns"])
        drift = DriftConfig({str(k): float(v) for k, v in config.get("drift", {}).items()}, jumps)
        return SimDevice(
            qubits,
            seed=int(config["seed"]),
            experiment_cost_s=float(config["experiment_cost_s"]),
            drift=drift,
            couplings=couplings,
        )
    except (TypeError, ValueError, UnknownQubit) as exc:
        raise ConfigError(f"device config: {exc}") from None


def load_device(source: str | Path | Mapping) -> SimDevice:
    if isinstance(source, Mapping):
        return device_from_config(dict(source))
    try:
        config = json.loads(Path(source).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}: {exc}") from None
    return device_from_config(config)
