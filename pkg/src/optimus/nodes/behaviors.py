"""Concrete calibration behaviors for the simulated superconducting device.

Bootstrap chain per qubit: readout_threshold -> spectroscopy -> rabi_coarse ->
rabi_fine (one or more amplification layers); two_qubit_phase joins the fine
layers of two qubits.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.stats import norm

from ..device import ScanData
from ..errors import BadData, ConfigError, FitDiverged
from ..graph import NodeSpec
from .base import (
    CalibrationResult,
    CheckDataOutcome,
    CheckModel,
    Classification,
    CurveBehavior,
    NodeBehavior,
    ParamView,
)
from .fitting import (
    NOISE_MULTIPLE,
    cosine_guess,
    fit_cosine,
    fit_model,
    noise_threshold,
    shot_noise,
)


def _scaled(params: ParamView, qubit: str, p):
    """Map a true excitation probability onto the measured one via readout errors."""
    e0, e1 = params.readout(qubit)
    return e0 + (1.0 - e0 - e1) * p


class ReadoutThreshold(NodeBehavior):
    """Root cal: place the 0/1 discrimination threshold between two histograms.

    Scan points are prepared states (0 and 1); the analysis uses the raw signal
    samples.  Stored parameters: ``threshold`` plus the Gaussian-model
    assignment errors ``err0`` = P(1|0) and ``err1`` = P(0|1), which downstream
    behaviors use to predict measured probabilities.
    """

    name = "readout_threshold"
    kind = "readout"
    fom_bounds = {"assignment_fidelity": "min", "threshold_shift": "max"}

    def validate(self, node):
        super().validate(node)
        if sorted(node.calibrate_scan.points) != [0.0, 1.0] or sorted(node.check_data_scan.points) != [0.0, 1.0]:
            raise ConfigError(f"{node.id}: readout scans must prepare states [0, 1]")

    def settings(self, node, params):
        own = params.own.get("threshold")
        return {q: ({} if own is None else {"threshold": own}) for q in node.qubits}

    @staticmethod
    def _histograms(data: ScanData):
        order = np.argsort(data.points)
        s0, s1 = data.raw[order[0]], data.raw[order[1]]
        return s0, s1

    @staticmethod
    def optimal_threshold(s0: np.ndarray, s1: np.ndarray) -> tuple[float, float, float]:
        """Threshold minimising the Gaussian-model assignment error.

        Returns (threshold, err0, err1).
        """
        m0, m1 = float(np.mean(s0)), float(np.mean(s1))
        d0, d1 = float(np.std(s0)), float(np.std(s1))
        d0, d1 = max(d0, 1e-12), max(d1, 1e-12)

        def errors(t):
            return float(norm.sf((t - m0) / d0)), float(norm.cdf((t - m1) / d1))

        if m1 <= m0:
            t = 0.5 * (m0 + m1)
        else:
            sol = minimize_scalar(lambda t: sum(errors(t)), bounds=(m0, m1), method="bounded",
                                  options={"xatol": 1e-10 * max(abs(m1 - m0), 1e-12)})
            t = float(sol.x)
        return (t, *errors(t))

    @staticmethod
    def fidelity(s0, s1, threshold) -> float:
        return 1.0 - 0.5 * (float(np.mean(s0 > threshold)) + float(np.mean(s1 <= threshold)))

    def expected_curve(self, node, params, x):
        e0, e1 = params.own["err0"], params.own["err1"]
        return np.where(np.asarray(x) > 0.5, 1.0 - e1, e0)

    def analyze_check(self, node, data, params):
        s0, s1 = self._histograms(data)
        stored = params.own["threshold"]
        sep = abs(float(np.mean(s1) - np.mean(s0)))
        sep_err = math.sqrt(np.var(s0) / len(s0) + np.var(s1) / len(s1))
        foms = {"assignment_fidelity": self.fidelity(s0, s1, stored)}
        if sep <= NOISE_MULTIPLE * sep_err:
            return CheckDataOutcome(Classification.BAD_DATA, foms)
        best, _, _ = self.optimal_threshold(s0, s1)
        foms["threshold_shift"] = abs(best - stored)
        cls = Classification.IN_SPEC if self.within_tolerance(foms, node.tolerance) else Classification.OUT_OF_SPEC
        return CheckDataOutcome(cls, foms, best - stored)

    def analyze_calibrate(self, node, data, params):
        s0, s1 = self._histograms(data)
        threshold, e0, e1 = self.optimal_threshold(s0, s1)
        return CalibrationResult(
            {"threshold": threshold, "err0": e0, "err1": e1},
            {"assignment_fidelity": self.fidelity(s0, s1, threshold)},
        )


class Spectroscopy(CurveBehavior):
    """Qubit frequency from the peak of a Lorentzian response vs drive frequency.

    Calibrate points are absolute drive frequencies (GHz).  Check points are
    offsets from the stored frequency in units of the stored linewidth (HWHM).
    """

    name = "spectroscopy"
    kind = "spectroscopy"
    target = "f_drive_ghz"
    fom_bounds = {
        "frequency_shift_mhz": "max",
        "frequency_stderr_mhz": "max",
        "peak_snr": "min",
    }
    capture_linewidths = 6.0

    def requires(self, node):
        return [(q, n) for q in node.qubits for n in ("threshold", "err0", "err1")]

    def check_points(self, node, params):
        f0, w = self.current(node, params), params.own["linewidth_mhz"]
        return f0 + np.asarray(node.check_data_scan.points) * w * 1e-3

    def check_model(self, node, params):
        q = node.qubits[-1]
        w = params.own["linewidth_mhz"]
        f0 = self.current(node, params)

        def curve(f, center):
            return _scaled(params, q, 0.5 / (1.0 + ((f - center) * 1e3 / w) ** 2))

        span = self.capture_linewidths * w * 1e-3
        return CheckModel(curve, f0, f0 - span, f0 + span)

    def shift_foms(self, fitted, current):
        return {"frequency_shift_mhz": abs(fitted - current) * 1e3}

    def analyze_check(self, node, data, params):
        sigma = shot_noise(data.values, data.shots)
        snr = float(np.ptp(data.values)) / sigma
        outcome = super().analyze_check(node, data, params)
        foms = {**outcome.figures_of_merit, "peak_snr": snr}
        if snr < NOISE_MULTIPLE:
            return CheckDataOutcome(Classification.BAD_DATA, foms)
        if outcome.classification is Classification.IN_SPEC and not self.within_tolerance(foms, node.tolerance):
            return CheckDataOutcome(Classification.OUT_OF_SPEC, foms, outcome.fitted_shift)
        return CheckDataOutcome(outcome.classification, foms, outcome.fitted_shift)

    @staticmethod
    def lorentzian(f, center, width_mhz, amplitude, offset):
        return offset + amplitude / (1.0 + ((f - center) * 1e3 / width_mhz) ** 2)

    def analyze_calibrate(self, node, data, params):
        f, y = data.points, data.values
        sigma = shot_noise(y, data.shots)
        i = int(np.argmax(y))
        base = float(np.median(y))
        half = base + 0.5 * (y[i] - base)
        step_mhz = float(np.min(np.abs(np.diff(f)))) * 1e3
        width0 = max(0.5 * np.count_nonzero(y > half) * step_mhz, step_mhz)
        guess = {"center": float(f[i]), "width_mhz": width0,
                 "amplitude": float(y[i] - base), "offset": base}
        lo, hi = float(f.min()), float(f.max())
        try:
            fit = fit_model(self.lorentzian, f, y, guess, shots=data.shots, bounds={
                "center": (lo - (hi - lo), hi + (hi - lo)),
                "width_mhz": (1e-3, 1e3 * (hi - lo)),
                "amplitude": (0.0, 1.5),
                "offset": (-0.5, 1.5),
            })
        except FitDiverged as exc:
            raise BadData(str(exc)) from None
        snr = fit["amplitude"] / sigma
        if snr < NOISE_MULTIPLE:
            raise BadData(f"no peak (SNR {snr:.2f})")
        if fit.residual_rms > noise_threshold(y, data.shots):
            raise BadData(f"data does not follow a Lorentzian (rms {fit.residual_rms:.4f})")
        if not lo <= fit["center"] <= hi:
            raise BadData("peak centre outside the scan window")
        return CalibrationResult(
            {"f_drive_ghz": fit["center"], "linewidth_mhz": fit["width_mhz"]},
            {"frequency_stderr_mhz": fit.stderr["center"] * 1e3, "peak_snr": snr},
        )


def _settings_with_drive(node, params):
    return {q: {"threshold": params.get(q, "threshold"),
                "f_drive_ghz": params.get(q, "f_drive_ghz")} for q in node.qubits}


class RabiCoarse(CurveBehavior):
    """Pi-pulse length from a wide Rabi scan.

    Calibrate points are absolute pulse durations (ns).  Check points are in
    quarter periods relative to the stored pi length: t = L (1 + k / 2), so
    k = -1..3 lands on the extrema and zero crossings of the expected curve.
    """

    name = "rabi_coarse"
    kind = "rabi"
    target = "pi_length_ns"
    fom_bounds = {
        "pi_length_rel_shift": "max",
        "pi_length_rel_stderr": "max",
        "contrast": "min",
    }
    capture = 0.4

    def requires(self, node):
        return [(q, n) for q in node.qubits for n in ("threshold", "err0", "err1", "f_drive_ghz")]

    def settings(self, node, params):
        return _settings_with_drive(node, params)

    def check_points(self, node, params):
        return self.current(node, params) * (1.0 + np.asarray(node.check_data_scan.points) / 2.0)

    def check_model(self, node, params):
        q = node.qubits[-1]
        n = node.check_data_scan.repeats
        current = self.current(node, params)

        def curve(t, length):
            return _scaled(params, q, np.sin(np.pi * n * t / (2.0 * length)) ** 2)

        return CheckModel(curve, current, current * (1 - self.capture / n), current * (1 + self.capture / n))

    def shift_foms(self, fitted, current):
        return {"pi_length_rel_shift": abs(fitted - current) / current}

    def analyze_calibrate(self, node, data, params):
        q = node.qubits[-1]
        e0, e1 = params.readout(q)
        t, y = data.points, data.values
        threshold = noise_threshold(y, data.shots)
        try:
            fit = fit_cosine(t, y, cosine_guess(t, y), shots=data.shots)
        except FitDiverged as exc:
            raise BadData(str(exc)) from None
        amplitude = abs(fit["amplitude"])
        if amplitude < threshold:
            raise BadData(f"no oscillation (amplitude {amplitude:.4f})")
        if fit.residual_rms > threshold:
            raise BadData(f"data does not follow a cosine (rms {fit.residual_rms:.4f})")
        frequency = abs(fit["frequency"])
        return CalibrationResult(
            {"pi_length_ns": 0.5 / frequency},
            {
                "pi_length_rel_stderr": fit.stderr["frequency"] / frequency,
                "contrast": 2.0 * amplitude / (1.0 - e0 - e1),
            },
        )


class RabiFine(CurveBehavior):
    """Pi-pulse length by error amplification: N identical pulses per experiment.

    ``repeats`` (N, odd) comes from the scan templates.  All points are in
    quarter fringes of the amplified pattern relative to a reference length L:
    t = L (1 + k / (2N)).  Calibrate scans are centred on the inherited pi
    length (the previous precision layer); check scans on the node's own value.
    Figures of merit are single-pulse rotation-angle errors in radians.
    """

    name = "rabi_fine"
    kind = "rabi"
    target = "pi_length_ns"
    fom_bounds = {
        "rotation_error_rad": "max",
        "rotation_stderr_rad": "max",
        "contrast": "min",
    }
    capture = 0.4

    def validate(self, node):
        super().validate(node)
        for scan in (node.check_data_scan, node.calibrate_scan):
            if scan.repeats % 2 == 0:
                raise ConfigError(f"{node.id}: amplification needs an odd number of repeats")

    def requires(self, node):
        return [(q, n) for q in node.qubits
                for n in ("threshold", "err0", "err1", "f_drive_ghz", "pi_length_ns")]

    def settings(self, node, params):
        return _settings_with_drive(node, params)

    @staticmethod
    def _durations(reference, scan):
        return reference * (1.0 + np.asarray(scan.points) / (2.0 * scan.repeats))

    def check_points(self, node, params):
        return self._durations(self.current(node, params), node.check_data_scan)

    def calibrate_points(self, node, params):
        return self._durations(params.get(node.qubits[-1], "pi_length_ns"), node.calibrate_scan)

    def check_model(self, node, params):
        q = node.qubits[-1]
        n = node.check_data_scan.repeats
        current = self.current(node, params)

        def curve(t, length):
            return _scaled(params, q, np.sin(np.pi * n * t / (2.0 * length)) ** 2)

        return CheckModel(curve, current, current * (1 - self.capture / n), current * (1 + self.capture / n))

    def shift_foms(self, fitted, current):
        return {"rotation_error_rad": math.pi * abs(fitted - current) / current}

    def analyze_calibrate(self, node, data, params):
        q = node.qubits[-1]
        e0, e1 = params.readout(q)
        n = data.repeats
        reference = params.get(q, "pi_length_ns")
        t, y = data.points, data.values
        threshold = noise_threshold(y, data.shots)
        lo, hi = reference * (1 - self.capture / n), reference * (1 + self.capture / n)

        def model(t, offset, amplitude, length):
            return offset + amplitude * np.cos(np.pi * n * t / length)

        # grid over the length; offset and amplitude are linear given it
        best = None
        for length in np.linspace(lo, hi, 201):
            a = np.column_stack([np.ones_like(t), np.cos(np.pi * n * t / length)])
            coef, *_ = np.linalg.lstsq(a, y, rcond=None)
            sse = float(np.sum((a @ coef - y) ** 2))
            if best is None or sse < best[0]:
                best = (sse, length, coef)
        _, length0, (c0, a0) = best
        try:
            fit = fit_model(model, t, y, {"offset": c0, "amplitude": a0, "length": length0},
                            bounds={"length": (lo, hi)}, shots=data.shots)
        except FitDiverged as exc:
            raise BadData(str(exc)) from None
        # odd N: the excited population peaks at t = L, so the cosine amplitude is negative
        amplitude = -fit["amplitude"]
        if amplitude < threshold:
            raise BadData(f"amplified pattern missing (amplitude {fit['amplitude']:.4f})")
        if fit.residual_rms > threshold:
            raise BadData(f"amplified pattern distorted (rms {fit.residual_rms:.4f})")
        length = fit["length"]
        return CalibrationResult(
            {"pi_length_ns": length},
            {
                "rotation_stderr_rad": math.pi * fit.stderr["length"] / length,
                "contrast": 2.0 * amplitude / (1.0 - e0 - e1),
            },
        )


class TwoQubitPhase(CurveBehavior):
    """Conditional-phase time from joint-state probability vs interaction time.

    The node's qubits are ``<control>-<target>``; both qubits' drive frequency
    and pi length are used to prepare the experiment, the target is measured.
    Check points are quarter periods relative to the stored time, as for
    rabi_coarse.
    """

    name = "two_qubit_phase"
    kind = "two_qubit"
    target = "cz_time_ns"
    fom_bounds = {
        "cz_time_rel_shift": "max",
        "cz_time_rel_stderr": "max",
        "contrast": "min",
    }
    capture = 0.4

    def validate(self, node):
        super().validate(node)
        if len(node.qubits) != 2:
            raise ConfigError(f"{node.id}: two_qubit_phase needs a '<qa>-<qb>' label")

    def requires(self, node):
        return [(q, n) for q in node.qubits
                for n in ("threshold", "err0", "err1", "f_drive_ghz", "pi_length_ns")]

    def settings(self, node, params):
        return {q: {"threshold": params.get(q, "threshold"),
                    "f_drive_ghz": params.get(q, "f_drive_ghz"),
                    "pi_length_ns": params.get(q, "pi_length_ns")} for q in node.qubits}

    def check_points(self, node, params):
        return self.current(node, params) * (1.0 + np.asarray(node.check_data_scan.points) / 2.0)

    def check_model(self, node, params):
        q = node.qubits[-1]
        current = self.current(node, params)

        def curve(tau, cz):
            return _scaled(params, q, np.sin(np.pi * tau / (2.0 * cz)) ** 2)

        return CheckModel(curve, current, current * (1 - self.capture), current * (1 + self.capture))

    def shift_foms(self, fitted, current):
        return {"cz_time_rel_shift": abs(fitted - current) / current}

    def analyze_calibrate(self, node, data, params):
        q = node.qubits[-1]
        e0, e1 = params.readout(q)
        tau, y = data.points, data.values
        threshold = noise_threshold(y, data.shots)
        try:
            fit = fit_cosine(tau, y, cosine_guess(tau, y), shots=data.shots)
        except FitDiverged as exc:
            raise BadData(str(exc)) from None
        amplitude = abs(fit["amplitude"])
        if amplitude < threshold:
            raise BadData(f"no conditional-phase oscillation (amplitude {amplitude:.4f})")
        if fit.residual_rms > threshold:
            raise BadData(f"data does not follow a cosine (rms {fit.residual_rms:.4f})")
        frequency = abs(fit["frequency"])
        return CalibrationResult(
            {"cz_time_ns": 0.5 / frequency},
            {
                "cz_time_rel_stderr": fit.stderr["frequency"] / frequency,
                "contrast": 2.0 * amplitude / (1.0 - e0 - e1),
            },
        )


BEHAVIORS: tuple[type[NodeBehavior], ...] = (
    ReadoutThreshold,
    Spectroscopy,
    RabiCoarse,
    RabiFine,
    TwoQubitPhase,
)


def default_registry() -> dict[str, NodeBehavior]:
    return {cls.name: cls() for cls in BEHAVIORS}
