"""check_state / check_data / calibrate and the maintain / diagnose traversals."""

from __future__ import annotations

import logging
from collections.abc import Mapping
from dataclasses import dataclass, field
from typing import Protocol

from .device import ScanData, ScanRequest, VirtualClock
from .errors import (
    BadData,
    BadDataInCalibrate,
    CalibrationFailed,
    DiagnoseError,
    EngineError,
    OptimusError,
)
from .events import EventLog
from .graph import CalGraph, ancestors
from .nodes import CheckDataOutcome, Classification, NodeBehavior, ParamView, default_registry
from .state import FailureKind, NodeStatus, StateStore

logger = logging.getLogger(__name__)


class Device(Protocol):
    clock: VirtualClock
    experiments: int

    def execute_scan(self, request: ScanRequest) -> ScanData: ...


@dataclass(frozen=True)
class StateCheck:
    """Result of check_state; ``condition`` names the first failing condition (1-4)."""

    passed: bool
    condition: int | None = None
    reason: str = ""

    def __bool__(self) -> bool:
        return self.passed


@dataclass(frozen=True)
class CalibrateOutcome:
    success: bool
    params: dict[str, float]
    figures_of_merit: dict[str, float]


@dataclass
class MaintainReport:
    target: str
    visited: list[tuple[str, str]] = field(default_factory=list)
    experiments_run: int = 0
    success: bool = False

    def count(self, action: str, node: str | None = None) -> int:
        return sum(1 for n, a in self.visited if a == action and (node is None or n == node))


@dataclass(frozen=True)
class ScanRecord:
    index: int
    node: str
    purpose: str
    data: ScanData


_PASS = StateCheck(True)


class Engine:
    """One calibration session: a graph, a state store and a device.

    The engine never draws randomness and never reads a wall clock; all time
    comes from ``device.clock``.
    """

    def __init__(
        self,
        graph: CalGraph,
        store: StateStore,
        device: Device,
        behaviors: Mapping[str, NodeBehavior] | None = None,
        log: EventLog | None = None,
    ):
        self.graph = graph
        self.store = store
        self.device = device
        self.behaviors = dict(behaviors) if behaviors is not None else default_registry()
        self.log = log if log is not None else EventLog()
        self.scans: list[ScanRecord] = []
        self._ancestors: dict[str, list[str]] = {}
        self._trace: list[tuple[str, str]] | None = None
        if store.graph is None:
            store.bind(graph)

    @property
    def clock(self) -> VirtualClock:
        return self.device.clock

    def _emit(self, event: str, node: str, outcome: str, detail: dict | None = None) -> None:
        self.log.emit(self.clock.now, event, node, outcome, detail)

    def _visit(self, node: str, action: str) -> None:
        if self._trace is not None:
            self._trace.append((node, action))

    # -- check_state --------------------------------------------------------

    def check_state(self, node_id: str, *, log: bool = True) -> StateCheck:
        """Decide from recorded knowledge alone whether ``node_id`` is in spec.

        Takes no data.  Dependencies are evaluated recursively, each once per
        query.
        """
        self.graph[node_id]
        result = self._state(node_id, self.clock.now, {})
        if log:
            detail = {} if result.passed else {"condition": result.condition, "reason": result.reason}
            self._emit("check_state", node_id, "pass" if result else "fail", detail)
        return result

    def _state(self, node_id: str, now: float, memo: dict[str, StateCheck]) -> StateCheck:
        if node_id in memo:
            return memo[node_id]
        spec = self.graph[node_id]
        rec = self.store.record(node_id)
        if rec.last_pass_time is None or rec.status in (NodeStatus.UNKNOWN, NodeStatus.OUT_OF_SPEC):
            result = StateCheck(False, 1, f"no current pass (status {rec.status.value})")
        elif not now - rec.last_pass_time < spec.timeout:
            result = StateCheck(False, 1, f"timed out ({now - rec.last_pass_time:g} s >= {spec.timeout:g} s)")
        elif rec.status is NodeStatus.FAILED_UNRESOLVED:
            result = StateCheck(False, 2, "calibrate failed without resolution")
        else:
            result = _PASS
            for dep in spec.dependencies:
                if rec.dep_versions_at_last_pass.get(dep) != self.store.cal_version(dep):
                    result = StateCheck(False, 3, f"{dep} recalibrated since last pass")
                    break
            else:
                for dep in spec.dependencies:
                    if not self._state(dep, now, memo):
                        result = StateCheck(False, 4, f"{dep} fails check_state")
                        break
        memo[node_id] = result
        return result

    # -- parameters ---------------------------------------------------------

    def params_for(self, node_id: str) -> ParamView:
        spec = self.graph[node_id]
        if node_id not in self._ancestors:
            self._ancestors[node_id] = ancestors(self.graph, node_id)
        inherited: dict[str, dict[str, float]] = {}
        for anc in self._ancestors[node_id]:
            values = self.store.node_params(anc)
            if values:
                inherited.setdefault(self.graph[anc].label, {}).update(values)
        return ParamView(node_id, spec.qubits, self.store.node_params(node_id), inherited)

    def _prepare(self, node_id: str):
        spec = self.graph[node_id]
        behavior = self.behaviors[spec.behavior]
        params = self.params_for(node_id)
        for qubit, name in behavior.requires(spec):
            params.get(qubit, name)
        return spec, behavior, params

    def _scan(self, node_id: str, purpose: str, request: ScanRequest) -> ScanData:
        data = self.device.execute_scan(request)
        self.scans.append(ScanRecord(len(self.scans) + 1, node_id, purpose, data))
        return data

    # -- check_data ---------------------------------------------------------

    def check_data(self, node_id: str) -> CheckDataOutcome:
        """Run the small scan and classify it as in spec, out of spec or bad data."""
        spec, behavior, params = self._prepare(node_id)
        self._visit(node_id, "check_data")
        if any(p not in params.own for p in spec.parameters):
            # nothing to compare against: out of spec by definition, no data spent
            outcome = CheckDataOutcome(Classification.OUT_OF_SPEC)
            self.store.record_failure(node_id, self.clock.now, FailureKind.OUT_OF_SPEC_OBSERVED)
            self._emit("check_data", node_id, outcome.classification.value, {"reason": "no prior value"})
            return outcome

        data = self._scan(node_id, "check_data", behavior.check_request(spec, params))
        outcome = behavior.analyze_check(spec, data, params)
        now = self.clock.now
        detail = {"points": len(data), "foms": outcome.figures_of_merit,
                  "fitted_shift": outcome.fitted_shift}
        if outcome.classification is Classification.IN_SPEC:
            if self.store.status(node_id) is NodeStatus.FAILED_UNRESOLVED:
                detail["note"] = "calibrate failure still unresolved"
            else:
                self.store.record_pass(node_id, now, outcome.figures_of_merit)
        elif outcome.classification is Classification.OUT_OF_SPEC:
            self.store.record_failure(node_id, now, FailureKind.OUT_OF_SPEC_OBSERVED,
                                      outcome.figures_of_merit)
        else:
            self.store.record_failure(node_id, now, FailureKind.BAD_DATA_OBSERVED,
                                      outcome.figures_of_merit)
        self._emit("check_data", node_id, outcome.classification.value, detail)
        return outcome

    # -- calibrate ----------------------------------------------------------

    def calibrate(self, node_id: str) -> CalibrateOutcome:
        """Run scan, analyze, update parameters.

        Returns a failed outcome (node marked FailedUnresolved) when the
        analysis works but figures of merit miss tolerance; raises
        BadDataInCalibrate when the scan is noise.
        """
        spec, behavior, params = self._prepare(node_id)
        self._visit(node_id, "calibrate")
        data = self._scan(node_id, "calibrate", behavior.calibrate_request(spec, params))
        now = self.clock.now
        try:
            result = behavior.analyze_calibrate(spec, data, params)
        except BadData as exc:
            self.store.record_failure(node_id, now, FailureKind.BAD_DATA_OBSERVED)
            self._emit("calibrate", node_id, "bad_data", {"points": len(data), "reason": str(exc)})
            err = BadDataInCalibrate(node_id, str(exc))
            self._emit("error", node_id, type(err).__name__, {"message": str(err)})
            raise err from None

        foms = result.figures_of_merit
        if not behavior.within_tolerance(foms, spec.tolerance):
            self.store.record_failure(node_id, now, FailureKind.CALIBRATE_FAILED, foms)
            self._emit("calibrate", node_id, "failure", {"points": len(data), "foms": foms})
            return CalibrateOutcome(False, result.params, foms)

        self.store.record_calibration(node_id, now, result.params, foms)
        self._emit("calibrate", node_id, "success",
                   {"points": len(data), "foms": foms, "params": result.params})
        version = self.store.cal_version(node_id)
        for name, value in result.params.items():
            self._emit("param_update", node_id, "updated",
                       {"param": name, "value": value, "version": version})
        return CalibrateOutcome(True, result.params, foms)

    def _calibrate_or_abort(self, node_id: str) -> None:
        outcome = self.calibrate(node_id)
        if not outcome.success:
            err = CalibrationFailed(node_id, outcome.figures_of_merit)
            self._emit("error", node_id, type(err).__name__, {"message": str(err)})
            raise err

    def _needs_calibration(self, node_id: str, outcome: CheckDataOutcome) -> bool:
        return (outcome.classification is not Classification.IN_SPEC
                or self.store.status(node_id) is NodeStatus.FAILED_UNRESOLVED)

    # -- traversals ---------------------------------------------------------

    def maintain(self, node_id: str) -> MaintainReport:
        """Bring ``node_id`` in spec, spending data only where knowledge fails.

        Raises DiagnoseError, BadDataInCalibrate or CalibrationFailed; the
        partial report is attached to the exception as ``report``.
        """
        self.graph[node_id]
        if self._trace is not None:
            raise OptimusError("maintain is already running in this session")
        start = self.device.experiments
        self._trace = []
        report = MaintainReport(node_id)
        try:
            self._maintain(node_id)
            report.success = True
        except EngineError as exc:
            exc.report = report
            raise
        finally:
            report.visited = self._trace
            report.experiments_run = self.device.experiments - start
            self._trace = None
        return report

    def _maintain(self, node_id: str) -> None:
        state = self.check_state(node_id)
        if state:
            self._visit(node_id, "check_state_pass")
            return
        for dep in self.graph.dependencies(node_id):
            self._maintain(dep)
        # only a failing dependency (condition 4) can be cured by maintaining dependencies
        if state.condition == 4 and self.check_state(node_id):
            self._visit(node_id, "check_state_pass")
            return
        outcome = self.check_data(node_id)
        if not self._needs_calibration(node_id, outcome):
            return
        if outcome.classification is Classification.BAD_DATA:
            self.diagnose(node_id)
        self._calibrate_or_abort(node_id)

    def diagnose(self, node_id: str) -> list[str]:
        """Repair dependencies of a node whose check_data returned bad data.

        Uses only experimental evidence (never check_state).  Returns the
        recalibrated nodes in the order they were calibrated.
        """
        self.graph[node_id]
        self._emit("diagnose_enter", node_id, "bad_data")
        self._visit(node_id, "diagnose")
        repaired: list[str] = []
        checked: list[str] = []
        for dep in self.graph.dependencies(node_id):
            outcome = self.check_data(dep)
            checked.append(dep)
            if not self._needs_calibration(dep, outcome):
                continue
            if outcome.classification is Classification.BAD_DATA:
                repaired.extend(self.diagnose(dep))
            self._calibrate_or_abort(dep)
            repaired.append(dep)
        if not repaired:
            err = DiagnoseError(node_id, checked)
            self._emit("error", node_id, type(err).__name__, {"checked": checked})
            raise err
        self._emit("diagnose_exit", node_id, "repaired", {"recalibrated": repaired})
        return repaired

    # -- reporting ----------------------------------------------------------

    def all_pass(self) -> bool:
        return all(self.check_state(n, log=False) for n in self.graph)
