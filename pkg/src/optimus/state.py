"""Dynamic knowledge about the system: per-node records and calibrated parameters.

The store is the lab notebook.  It never reads a clock; every mutation takes an
explicit virtual timestamp.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any

from .errors import CorruptSnapshot, IllegalTransition, OptimusError, UnknownNode

if TYPE_CHECKING:
    from .graph import CalGraph

FORMAT = "optimus-state"
VERSION = 1


class NodeStatus(str, enum.Enum):
    IN_SPEC = "InSpec"
    OUT_OF_SPEC = "OutOfSpec"
    UNKNOWN = "Unknown"
    FAILED_UNRESOLVED = "FailedUnresolved"


class FailureKind(enum.Enum):
    CALIBRATE_FAILED = "CalibrateFailed"
    BAD_DATA_OBSERVED = "BadDataObserved"
    OUT_OF_SPEC_OBSERVED = "OutOfSpecObserved"


@dataclass
class NodeRecord:
    status: NodeStatus = NodeStatus.UNKNOWN
    last_pass_time: float | None = None
    cal_version: int = 0
    dep_versions_at_last_pass: dict[str, int] = field(default_factory=dict)
    last_figures_of_merit: dict[str, float] = field(default_factory=dict)


@dataclass
class ParamEntry:
    value: float
    version: int
    time: float | None


class StateStore:
    """Per-node records plus the parameter table.

    Mutations need the graph (for dependency snapshots and id checks); a store
    restored without one is read-only until :meth:`bind` is called.
    """

    def __init__(self, graph: CalGraph | None = None):
        self.graph = graph
        self.records: dict[str, NodeRecord] = {}
        self.params: dict[tuple[str, str], ParamEntry] = {}
        self.saved_at: float | None = None
        if graph is not None:
            for node_id in graph:
                for name, value in graph[node_id].initial_params.items():
                    self.params[(node_id, name)] = ParamEntry(float(value), 0, None)

    def bind(self, graph: CalGraph) -> StateStore:
        unknown = [n for n in self.records if n not in graph]
        unknown += [n for n, _ in self.params if n not in graph]
        if unknown:
            raise UnknownNode(unknown[0])
        self.graph = graph
        for node_id in graph:
            for name, value in graph[node_id].initial_params.items():
                self.params.setdefault((node_id, name), ParamEntry(float(value), 0, None))
        return self

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, StateStore):
            return NotImplemented
        return (
            self.records == other.records
            and self.params == other.params
            and self.saved_at == other.saved_at
        )

    # -- queries ------------------------------------------------------------

    def _known(self, node_id: str) -> None:
        if self.graph is None:
            raise OptimusError("store is not bound to a graph")
        if node_id not in self.graph:
            raise UnknownNode(node_id)

    def record(self, node_id: str) -> NodeRecord:
        """The record for ``node_id``; untouched nodes read as a default Unknown record."""
        if self.graph is not None and node_id not in self.graph:
            raise UnknownNode(node_id)
        return self.records.get(node_id) or NodeRecord()

    def status(self, node_id: str) -> NodeStatus:
        return self.record(node_id).status

    def cal_version(self, node_id: str) -> int:
        return self.record(node_id).cal_version

    def param(self, node_id: str, name: str) -> float | None:
        entry = self.params.get((node_id, name))
        return None if entry is None else entry.value

    def node_params(self, node_id: str) -> dict[str, float]:
        return {name: e.value for (n, name), e in self.params.items() if n == node_id}

    # -- mutations ----------------------------------------------------------

    def _mut(self, node_id: str) -> NodeRecord:
        self._known(node_id)
        return self.records.setdefault(node_id, NodeRecord())

    def record_pass(self, node_id: str, time: float, foms: dict[str, float]) -> None:
        rec = self._mut(node_id)
        if rec.status is NodeStatus.FAILED_UNRESOLVED:
            raise IllegalTransition(
                f"{node_id}: only a successful calibrate can clear FailedUnresolved"
            )
        self._apply_pass(node_id, rec, time, foms)

    def _apply_pass(self, node_id, rec, time, foms) -> None:
        rec.status = NodeStatus.IN_SPEC
        rec.last_pass_time = float(time)
        rec.dep_versions_at_last_pass = {
            d: self.cal_version(d) for d in self.graph.dependencies(node_id)
        }
        rec.last_figures_of_merit = {k: float(v) for k, v in foms.items()}

    def record_calibration(
        self, node_id: str, time: float, new_params: dict[str, float], foms: dict[str, float]
    ) -> None:
        rec = self._mut(node_id)
        rec.cal_version += 1
        for name, value in new_params.items():
            self.params[(node_id, name)] = ParamEntry(float(value), rec.cal_version, float(time))
        self._apply_pass(node_id, rec, time, foms)

    def record_failure(
        self,
        node_id: str,
        time: float,
        kind: FailureKind,
        foms: dict[str, float] | None = None,
    ) -> None:
        """Record negative evidence.

        ``CALIBRATE_FAILED`` marks the node FailedUnresolved.  Observations from
        check_data mark it OutOfSpec but leave a pending calibrate failure alone.
        """
        rec = self._mut(node_id)
        if foms is not None:
            rec.last_figures_of_merit = {k: float(v) for k, v in foms.items()}
        if kind is FailureKind.CALIBRATE_FAILED:
            rec.status = NodeStatus.FAILED_UNRESOLVED
        elif rec.status is not NodeStatus.FAILED_UNRESOLVED:
            rec.status = NodeStatus.OUT_OF_SPEC

    def corrupt_param(self, node_id: str, name: str, factor: float) -> None:
        """Scale a stored value in place without touching its version (fault injection)."""
        entry = self.params.get((node_id, name))
        if entry is None:
            raise KeyError((node_id, name))
        entry.value *= factor

    # -- persistence --------------------------------------------------------

    def persist(self, now: float | None = None) -> str:
        """Serialize to JSON Lines: a header, node records, then parameters."""
        if now is not None:
            self.saved_at = float(now)
        lines = [json.dumps({"format": FORMAT, "version": VERSION, "now": self.saved_at})]
        for node_id in self._ordered(self.records):
            rec = self.records[node_id]
            lines.append(json.dumps({
                "id": node_id,
                "status": rec.status.value,
                "last_pass_time": rec.last_pass_time,
                "cal_version": rec.cal_version,
                "dep_versions": rec.dep_versions_at_last_pass,
                "foms": rec.last_figures_of_merit,
            }))
        nodes = self._ordered({n for n, _ in self.params})
        for node_id in nodes:
            for (n, name), e in self.params.items():
                if n == node_id:
                    lines.append(json.dumps({
                        "node": n, "param": name, "value": e.value,
                        "version": e.version, "time": e.time,
                    }))
        return "\n".join(lines) + "\n"

    def _ordered(self, ids) -> list[str]:
        if self.graph is not None:
            return [n for n in self.graph if n in ids]
        return [n for n in self.records if n in ids] + sorted(
            n for n in ids if n not in self.records
        )

    @classmethod
    def restore(cls, text: str, graph: CalGraph | None = None) -> StateStore:
        store = cls()
        lines = text.split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        if not lines:
            raise CorruptSnapshot(1, "missing header")
        for lineno, line in enumerate(lines, start=1):
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorruptSnapshot(lineno, f"invalid JSON ({exc.msg})") from None
            if not isinstance(obj, dict):
                raise CorruptSnapshot(lineno, "expected an object")
            try:
                if lineno == 1:
                    if obj.get("format") != FORMAT or obj.get("version") != VERSION:
                        raise CorruptSnapshot(lineno, "not an optimus-state v1 header")
                    store.saved_at = obj.get("now")
                elif obj.keys() == {"id", "status", "last_pass_time", "cal_version", "dep_versions", "foms"}:
                    store.records[obj["id"]] = NodeRecord(
                        status=NodeStatus(obj["status"]),
                        last_pass_time=obj["last_pass_time"],
                        cal_version=int(obj["cal_version"]),
                        dep_versions_at_last_pass={k: int(v) for k, v in obj["dep_versions"].items()},
                        last_figures_of_merit={k: float(v) for k, v in obj["foms"].items()},
                    )
                elif obj.keys() == {"node", "param", "value", "version", "time"}:
                    store.params[(obj["node"], obj["param"])] = ParamEntry(
                        float(obj["value"]), int(obj["version"]), obj["time"]
                    )
                else:
                    raise CorruptSnapshot(lineno, f"unrecognised record keys {sorted(obj)}")
            except (ValueError, TypeError, AttributeError) as exc:
                raise CorruptSnapshot(lineno, str(exc)) from None
        if graph is not None:
            try:
                store.bind(graph)
            except UnknownNode as exc:
                raise CorruptSnapshot(0, f"snapshot mentions {exc}") from None
        return store
