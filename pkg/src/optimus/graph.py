"""Calibration graph: node specs, dependency edges, validation and ordering.

Edges are stored node -> dependencies (arrows point towards the root).  All
orderings break ties by declaration order so every traversal is reproducible.
"""

from __future__ import annotations

import heapq
import json
from collections.abc import Collection, Iterable, Iterator, Mapping
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType
from typing import Any

from .errors import (
    ConfigError,
    CycleDetected,
    DuplicateNode,
    UnknownDependency,
    UnknownNode,
)

QUBIT_SEPARATOR = "-"


@dataclass(frozen=True)
class ScanTemplate:
    """Points to sweep for one scan; their units are defined by the behavior.

    ``repeats`` is the number of identical pulses per experiment (error
    amplification); it is 1 for ordinary scans.
    """

    swept_parameter: str
    points: tuple[float, ...]
    shots_per_point: int
    repeats: int = 1

    def __post_init__(self):
        object.__setattr__(self, "points", tuple(float(p) for p in self.points))
        if not self.points:
            raise ValueError("scan template needs at least one point")
        steps = [b - a for a, b in zip(self.points, self.points[1:])]
        if not (all(s > 0 for s in steps) or all(s < 0 for s in steps)):
            raise ValueError(f"scan points must be strictly monotonic: {self.points}")
        if int(self.shots_per_point) != self.shots_per_point or self.shots_per_point < 1:
            raise ValueError("shots_per_point must be a positive integer")
        if int(self.repeats) != self.repeats or self.repeats < 1:
            raise ValueError("repeats must be a positive integer")

    def __len__(self) -> int:
        return len(self.points)


@dataclass(frozen=True)
class NodeSpec:
    """Static definition of one cal."""

    id: str
    dependencies: tuple[str, ...]
    parameters: tuple[str, ...]
    timeout: float
    tolerance: Mapping[str, float]
    check_data_scan: ScanTemplate
    calibrate_scan: ScanTemplate
    behavior: str
    initial_params: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "dependencies", tuple(self.dependencies))
        object.__setattr__(self, "parameters", tuple(self.parameters))
        object.__setattr__(self, "tolerance", MappingProxyType(dict(self.tolerance)))
        object.__setattr__(
            self, "initial_params", MappingProxyType(dict(self.initial_params))
        )
        if not self.id:
            raise ValueError("node id must be non-empty")
        if len(set(self.dependencies)) != len(self.dependencies):
            raise ValueError(f"{self.id}: duplicate dependencies {self.dependencies}")
        if self.id in self.dependencies:
            raise ValueError(f"{self.id}: a node cannot depend on itself")
        if not self.timeout > 0:
            raise ValueError(f"{self.id}: timeout must be positive")
        if len(self.check_data_scan) > len(self.calibrate_scan):
            raise ValueError(
                f"{self.id}: check_data scan has more points than the calibrate scan"
            )
        unknown = set(self.initial_params) - set(self.parameters)
        if unknown:
            raise ValueError(f"{self.id}: initial values for unknown parameters {sorted(unknown)}")

    @property
    def label(self) -> str:
        """Qubit label part of ``<cal_name>.<label>``; empty when absent."""
        return self.id.split(".", 1)[1] if "." in self.id else ""

    @property
    def qubits(self) -> tuple[str, ...]:
        label = self.label
        return tuple(label.split(QUBIT_SEPARATOR)) if label else ()


class CalGraph:
    """Immutable validated DAG of NodeSpecs.  Build it with :func:`build_graph`."""

    def __init__(self, nodes: dict[str, NodeSpec], order: list[str]):
        self._nodes = nodes
        self._order = tuple(order)
        self._index = {n: i for i, n in enumerate(order)}
        dependents: dict[str, list[str]] = {n: [] for n in order}
        for n in order:
            for d in nodes[n].dependencies:
                dependents[d].append(n)
        self._dependents = {n: tuple(v) for n, v in dependents.items()}
        self._topo: tuple[str, ...] | None = None

    def __contains__(self, node_id: object) -> bool:
        return node_id in self._nodes

    def __getitem__(self, node_id: str) -> NodeSpec:
        try:
            return self._nodes[node_id]
        except KeyError:
            raise UnknownNode(node_id) from None

    def __iter__(self) -> Iterator[str]:
        return iter(self._order)

    def __len__(self) -> int:
        return len(self._order)

    @property
    def declaration_order(self) -> tuple[str, ...]:
        return self._order

    @property
    def nodes(self) -> Mapping[str, NodeSpec]:
        return MappingProxyType(self._nodes)

    def index(self, node_id: str) -> int:
        return self._index[node_id]

    def dependencies(self, node_id: str) -> tuple[str, ...]:
        return self[node_id].dependencies

    def dependents(self, node_id: str) -> tuple[str, ...]:
        self[node_id]
        return self._dependents[node_id]

    def edges(self) -> list[tuple[str, str]]:
        """(node, dependency) pairs in declaration order."""
        return [(n, d) for n in self._order for d in self._nodes[n].dependencies]


def build_graph(specs: Iterable[NodeSpec]) -> CalGraph:
    nodes: dict[str, NodeSpec] = {}
    order: list[str] = []
    for spec in specs:
        if spec.id in nodes:
            raise DuplicateNode(spec.id)
        nodes[spec.id] = spec
        order.append(spec.id)
    for n in order:
        for d in nodes[n].dependencies:
            if d not in nodes:
                raise UnknownDependency(n, d)
    cycle = _find_cycle(nodes, order)
    if cycle:
        raise CycleDetected(cycle)
    return CalGraph(nodes, order)


def _find_cycle(nodes: Mapping[str, NodeSpec], order: list[str]) -> list[str] | None:
    # Iterative DFS; colors: 0 unseen, 1 on stack, 2 done.
    color = dict.fromkeys(order, 0)
    for root in order:
        if color[root]:
            continue
        path = [root]
        stack = [iter(nodes[root].dependencies)]
        color[root] = 1
        while stack:
            nxt = next(stack[-1], None)
            if nxt is None:
                color[path.pop()] = 2
                stack.pop()
            elif color[nxt] == 1:
                return path[path.index(nxt):]
            elif color[nxt] == 0:
                color[nxt] = 1
                path.append(nxt)
                stack.append(iter(nodes[nxt].dependencies))
    return None


def _kahn(graph: CalGraph, subset: Collection[str]) -> list[str]:
    pending = {n: sum(1 for d in graph.dependencies(n) if d in subset) for n in subset}
    ready = [(graph.index(n), n) for n, k in pending.items() if k == 0]
    heapq.heapify(ready)
    out = []
    while ready:
        _, n = heapq.heappop(ready)
        out.append(n)
        for m in graph.dependents(n):
            if m in pending:
                pending[m] -= 1
                if pending[m] == 0:
                    heapq.heappush(ready, (graph.index(m), m))
    return out


def topological_order(graph: CalGraph) -> list[str]:
    """Dependencies first; ties go to the earlier-declared node."""
    if graph._topo is None:
        graph._topo = tuple(_kahn(graph, set(graph)))
    return list(graph._topo)


def ancestors(graph: CalGraph, node_id: str) -> list[str]:
    """Dependency closure of ``node_id`` (excluding itself), topologically ordered."""
    seen: set[str] = set()
    todo = list(graph.dependencies(node_id))
    while todo:
        n = todo.pop()
        if n not in seen:
            seen.add(n)
            todo.extend(graph.dependencies(n))
    return _kahn(graph, seen)


def descendants(graph: CalGraph, node_id: str) -> list[str]:
    """Every node that depends on ``node_id`` directly or indirectly."""
    seen: set[str] = set()
    todo = list(graph.dependents(node_id))
    while todo:
        n = todo.pop()
        if n not in seen:
            seen.add(n)
            todo.extend(graph.dependents(n))
    return _kahn(graph, seen)


# -- config file ------------------------------------------------------------

_NODE_KEYS = {
    "id", "dependencies", "parameters", "timeout_s", "tolerance", "behavior",
    "check_data_scan", "calibrate_scan",
}
_OPTIONAL_NODE_KEYS = {"initial_params"}
_SCAN_KEYS = {"swept_parameter", "points", "shots_per_point"}
_OPTIONAL_SCAN_KEYS = {"repeats"}


def _check_keys(obj: Any, required: set[str], optional: set[str], where: str) -> None:
    if not isinstance(obj, dict):
        raise ConfigError(f"{where}: expected an object")
    missing = required - obj.keys()
    extra = obj.keys() - required - optional
    if missing:
        raise ConfigError(f"{where}: missing keys {sorted(missing)}")
    if extra:
        raise ConfigError(f"{where}: unknown keys {sorted(extra)}")


def _scan_from_config(obj: Any, where: str) -> ScanTemplate:
    _check_keys(obj, _SCAN_KEYS, _OPTIONAL_SCAN_KEYS, where)
    try:
        return ScanTemplate(
            swept_parameter=str(obj["swept_parameter"]),
            points=tuple(obj["points"]),
            shots_per_point=obj["shots_per_point"],
            repeats=obj.get("repeats", 1),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def specs_from_config(config: Any, behaviors: Mapping[str, Any] | None = None) -> list[NodeSpec]:
    """Parse the ``{"nodes": [...]}`` document strictly.

    When ``behaviors`` is given, behavior names and tolerance keys are checked
    against it.
    """
    _check_keys(config, {"nodes"}, set(), "graph config")
    if not isinstance(config["nodes"], list):
        raise ConfigError("graph config: 'nodes' must be a list")
    specs = []
    for i, obj in enumerate(config["nodes"]):
        where = f"nodes[{i}]"
        _check_keys(obj, _NODE_KEYS, _OPTIONAL_NODE_KEYS, where)
        where = f"node {obj['id']!r}"
        try:
            spec = NodeSpec(
                id=str(obj["id"]),
                dependencies=tuple(obj["dependencies"]),
                parameters=tuple(obj["parameters"]),
                timeout=float(obj["timeout_s"]),
                tolerance={str(k): float(v) for k, v in obj["tolerance"].items()},
                check_data_scan=_scan_from_config(obj["check_data_scan"], f"{where} check_data_scan"),
                calibrate_scan=_scan_from_config(obj["calibrate_scan"], f"{where} calibrate_scan"),
                behavior=str(obj["behavior"]),
                initial_params={
                    str(k): float(v) for k, v in obj.get("initial_params", {}).items()
                },
            )
        except (TypeError, ValueError, AttributeError) as exc:
            raise ConfigError(f"{where}: {exc}") from None
        if behaviors is not None:
            if spec.behavior not in behaviors:
                raise ConfigError(f"{where}: unknown behavior {spec.behavior!r}")
            behaviors[spec.behavior].validate(spec)
        specs.append(spec)
    return specs


def load_graph(source: str | Path | Mapping, behaviors: Mapping[str, Any] | None = None) -> CalGraph:
    """Load and validate a graph config from a path or an already-parsed dict.

    Behavior names are validated against the default registry unless another
    mapping is passed.
    """
    if behaviors is None:
        from .nodes import default_registry

        behaviors = default_registry()
    if isinstance(source, Mapping):
        config = source
    else:
        text = Path(source).read_text()
        try:
            config = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{source}: {exc}") from None
    return build_graph(specs_from_config(config, behaviors))
