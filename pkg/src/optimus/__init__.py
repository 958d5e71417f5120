"""Calibration orchestration over a dependency graph of calibration nodes."""

from importlib import resources
from pathlib import Path

from .device import Jump, QubitTruth, ScanData, ScanRequest, SimDevice, inject_fault, load_device
from .engine import CalibrateOutcome, Engine, MaintainReport, StateCheck
from .errors import (
    BadDataInCalibrate,
    CalibrationFailed,
    CycleDetected,
    DiagnoseError,
    OptimusError,
    UnknownDependency,
)
from .events import Event, EventLog
from .graph import CalGraph, NodeSpec, ScanTemplate, build_graph, load_graph, topological_order
from .state import NodeStatus, StateStore

__version__ = "0.1.0"


def data_path(name: str) -> Path:
    """Path of a file shipped in the package data directory."""
    return Path(str(resources.files(__name__).joinpath("data", name)))


__all__ = [
    "BadDataInCalibrate", "CalGraph", "CalibrateOutcome", "CalibrationFailed", "CycleDetected",
    "DiagnoseError", "Engine", "Event", "EventLog", "Jump", "MaintainReport", "NodeSpec",
    "NodeStatus", "OptimusError", "QubitTruth", "ScanData", "ScanRequest", "ScanTemplate",
    "SimDevice", "StateCheck", "StateStore", "UnknownDependency", "build_graph", "data_path",
    "inject_fault", "load_device", "load_graph", "topological_order",
]
