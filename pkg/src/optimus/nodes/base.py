"""Node behavior interface and the three-way check_data classifier."""

from __future__ import annotations

import enum
from abc import ABC, abstractmethod
from collections.abc import Callable, Mapping
from dataclasses import dataclass, field
from typing import ClassVar

import numpy as np

from ..device import ScanData, ScanRequest
from ..errors import ConfigError, FitDiverged, MissingParameter
from ..graph import NodeSpec
from .fitting import fit_scalar, noise_threshold


class Classification(str, enum.Enum):
    IN_SPEC = "in_spec"
    OUT_OF_SPEC = "out_of_spec"
    BAD_DATA = "bad_data"


@dataclass(frozen=True)
class CheckDataOutcome:
    classification: Classification
    figures_of_merit: dict[str, float] = field(default_factory=dict)
    fitted_shift: float | None = None

    def __post_init__(self):
        if self.classification is Classification.BAD_DATA and self.fitted_shift is not None:
            raise ValueError("bad data carries no fitted shift")


@dataclass(frozen=True)
class CalibrationResult:
    params: dict[str, float]
    figures_of_merit: dict[str, float]


@dataclass(frozen=True)
class ParamView:
    """Stored parameters visible to one node.

    ``own`` holds the node's current values; ``inherited`` maps qubit label to
    the values supplied by its ancestors (the closest ancestor wins when two
    layers store the same name, e.g. coarse and fine pi lengths).
    """

    node: str
    qubits: tuple[str, ...]
    own: Mapping[str, float]
    inherited: Mapping[str, Mapping[str, float]]

    def get(self, qubit: str, name: str) -> float:
        try:
            return self.inherited[qubit][name]
        except KeyError:
            raise MissingParameter(self.node, f"{qubit}.{name}") from None

    def readout(self, qubit: str) -> tuple[float, float]:
        return self.get(qubit, "err0"), self.get(qubit, "err1")


@dataclass(frozen=True)
class CheckModel:
    """Expected check_data curve as a function of the node's target parameter."""

    curve: Callable[[np.ndarray, float], np.ndarray]
    current: float
    lower: float
    upper: float


class NodeBehavior(ABC):
    """What a calibration node knows how to do.

    Behaviors are stateless: every method is a pure function of its arguments.
    ``fom_bounds`` declares, per figure of merit, whether its tolerance is an
    upper ("max", compared on the absolute value) or lower ("min") bound.
    """

    name: ClassVar[str]
    kind: ClassVar[str]
    fom_bounds: ClassVar[dict[str, str]]

    def validate(self, node: NodeSpec) -> None:
        unknown = set(node.tolerance) - set(self.fom_bounds)
        if unknown:
            raise ConfigError(f"{node.id}: {self.name} has no figures of merit {sorted(unknown)}")
        if not node.qubits:
            raise ConfigError(f"{node.id}: node id needs a qubit label (<cal>.<qubit>)")

    def requires(self, node: NodeSpec) -> list[tuple[str, str]]:
        """(qubit, parameter) pairs that must be inherited from ancestors."""
        return []

    def within_tolerance(self, foms: Mapping[str, float], tolerance: Mapping[str, float]) -> bool:
        for key, limit in tolerance.items():
            if key not in foms:
                continue
            value = foms[key]
            if self.fom_bounds[key] == "min":
                if not value >= limit:
                    return False
            elif not abs(value) <= limit:
                return False
        return True

    def settings(self, node: NodeSpec, params: ParamView) -> dict[str, dict[str, float]]:
        return {q: {"threshold": params.get(q, "threshold")} for q in node.qubits}

    def check_request(self, node: NodeSpec, params: ParamView) -> ScanRequest:
        scan = node.check_data_scan
        return ScanRequest(self.kind, node.qubits, tuple(self.check_points(node, params)),
                           scan.shots_per_point, self.settings(node, params), scan.repeats)

    def calibrate_request(self, node: NodeSpec, params: ParamView) -> ScanRequest:
        scan = node.calibrate_scan
        return ScanRequest(self.kind, node.qubits, tuple(self.calibrate_points(node, params)),
                           scan.shots_per_point, self.settings(node, params), scan.repeats)

    def check_points(self, node: NodeSpec, params: ParamView) -> np.ndarray:
        return np.asarray(node.check_data_scan.points)

    def calibrate_points(self, node: NodeSpec, params: ParamView) -> np.ndarray:
        return np.asarray(node.calibrate_scan.points)

    @abstractmethod
    def expected_curve(self, node: NodeSpec, params: ParamView, x: np.ndarray) -> np.ndarray:
        """Predicted measured probabilities at ``x`` for the node's own parameters."""

    @abstractmethod
    def analyze_check(self, node: NodeSpec, data: ScanData, params: ParamView) -> CheckDataOutcome:
        ...

    @abstractmethod
    def analyze_calibrate(self, node: NodeSpec, data: ScanData, params: ParamView) -> CalibrationResult:
        """New parameter values and figures of merit; raises BadData on noise."""


def classify_check_data(
    data: ScanData, params: ParamView, behavior: CurveBehavior, node: NodeSpec
) -> CheckDataOutcome:
    """Sort check_data into in spec / out of spec / bad data.

    The target parameter is refit within the behavior's capture range with all
    other quantities fixed at their stored values.  A refit that still misses
    the data by more than the shot-noise threshold means the data is not on
    any expected curve (bad data); otherwise the parameter shift decides.
    """
    model = behavior.check_model(node, params)
    x, y = data.points, data.values
    threshold = noise_threshold(y, data.shots)
    residual_current = float(np.sqrt(np.mean((model.curve(x, model.current) - y) ** 2)))
    foms = {"residual_current": residual_current, "noise_threshold": threshold}
    try:
        fit = fit_scalar(model.curve, x, y, model.lower, model.upper)
    except FitDiverged:
        return CheckDataOutcome(Classification.BAD_DATA, foms)
    foms["residual_rms"] = fit.residual_rms
    if fit.residual_rms > threshold:
        return CheckDataOutcome(Classification.BAD_DATA, foms)
    fitted = fit["value"]
    foms.update(behavior.shift_foms(fitted, model.current))
    if behavior.within_tolerance(foms, node.tolerance):
        return CheckDataOutcome(Classification.IN_SPEC, foms, fitted - model.current)
    return CheckDataOutcome(Classification.OUT_OF_SPEC, foms, fitted - model.current)


class CurveBehavior(NodeBehavior):
    """A behavior whose check_data compares a 1-D scan against a model curve."""

    target: ClassVar[str]

    def current(self, node: NodeSpec, params: ParamView) -> float:
        try:
            return params.own[self.target]
        except KeyError:
            raise MissingParameter(node.id, self.target) from None

    @abstractmethod
    def check_model(self, node: NodeSpec, params: ParamView) -> CheckModel:
        ...

    @abstractmethod
    def shift_foms(self, fitted: float, current: float) -> dict[str, float]:
        ...

    def expected_curve(self, node, params, x):
        model = self.check_model(node, params)
        return model.curve(np.asarray(x, dtype=float), model.current)

    def analyze_check(self, node, data, params):
        return classify_check_data(data, params, self, node)
