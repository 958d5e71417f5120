"""Exception hierarchy shared by every layer of the calibration stack."""

from __future__ import annotations


class OptimusError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(OptimusError):
    """A graph, device or scenario file could not be parsed."""


# -- graph ------------------------------------------------------------------


class GraphError(OptimusError):
    pass


class DuplicateNode(GraphError):
    def __init__(self, node_id: str):
        super().__init__(f"duplicate node id {node_id!r}")
        self.node_id = node_id


class UnknownDependency(GraphError):
    def __init__(self, source: str, target: str):
        super().__init__(f"node {source!r} depends on unknown node {target!r}")
        self.source = source
        self.target = target


class CycleDetected(GraphError):
    def __init__(self, cycle: list[str]):
        super().__init__("dependency cycle: " + " -> ".join([*cycle, cycle[0]]))
        self.cycle = list(cycle)


class UnknownNode(OptimusError, KeyError):
    def __init__(self, node_id: str):
        super().__init__(node_id)
        self.node_id = node_id

    def __str__(self) -> str:
        return f"unknown node {self.node_id!r}"


# -- state ------------------------------------------------------------------


class IllegalTransition(OptimusError):
    pass


class CorruptSnapshot(OptimusError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


# -- fitting / behaviors ----------------------------------------------------


class InsufficientData(OptimusError, ValueError):
    pass


class FitDiverged(OptimusError):
    pass


class BadData(OptimusError):
    """Raised by a behavior's calibration analysis when the scan is noise."""


# -- device -----------------------------------------------------------------


class UnknownQubit(OptimusError, KeyError):
    def __str__(self) -> str:
        return f"unknown qubit {self.args[0]!r}"


class UnknownTarget(OptimusError, KeyError):
    def __str__(self) -> str:
        return f"unknown fault target {self.args[0]!r}"


# -- engine -----------------------------------------------------------------


class EngineError(OptimusError):
    #: Partial MaintainReport, attached when the error escapes ``maintain``.
    report = None


class MissingParameter(EngineError):
    def __init__(self, node_id: str, name: str):
        super().__init__(f"node {node_id!r} needs parameter {name!r} which has no value")
        self.node_id = node_id
        self.name = name


class DiagnoseError(EngineError):
    def __init__(self, node_id: str, checked: list[str]):
        deps = ", ".join(checked) if checked else "none"
        super().__init__(
            f"diagnose({node_id}) found no dependency out of spec (checked: {deps})"
        )
        self.node_id = node_id
        self.checked = list(checked)


class BadDataInCalibrate(EngineError):
    def __init__(self, node_id: str, reason: str = ""):
        msg = f"calibrate({node_id}) acquired bad data"
        super().__init__(f"{msg}: {reason}" if reason else msg)
        self.node_id = node_id
        self.reason = reason


class CalibrationFailed(EngineError):
    def __init__(self, node_id: str, figures_of_merit: dict[str, float]):
        super().__init__(f"calibrate({node_id}) out of tolerance: {figures_of_merit}")
        self.node_id = node_id
        self.figures_of_merit = dict(figures_of_merit)
