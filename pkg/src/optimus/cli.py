"""Command-line entry point: validate, maintain, status and scripted scenarios."""

from __future__ import annotations

import argparse
import json
import logging
import math
import operator
import shlex
import sys
from dataclasses import dataclass
from pathlib import Path

from .device import Jump, SimDevice, inject_fault, load_device
from .engine import Engine, MaintainReport
from .errors import (
    BadDataInCalibrate,
    CalibrationFailed,
    ConfigError,
    CorruptSnapshot,
    DiagnoseError,
    EngineError,
    GraphError,
    OptimusError,
)
from .graph import CalGraph, load_graph, topological_order
from .state import NodeRecord, StateStore

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_IO = 1
EXIT_INVALID_GRAPH = 2
EXIT_DIAGNOSE = 3
EXIT_CALIBRATE = 4
EXIT_ASSERT = 5


def engine_exit_code(exc: EngineError) -> int:
    if isinstance(exc, DiagnoseError):
        return EXIT_DIAGNOSE
    if isinstance(exc, (CalibrationFailed, BadDataInCalibrate)):
        return EXIT_CALIBRATE
    return EXIT_INVALID_GRAPH  # MissingParameter: the graph does not supply what a node needs


class InputError(OptimusError):
    """Unreadable or unparsable input file (exit code 1)."""


def _read_graph(path: str) -> CalGraph:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None
    try:
        config = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON ({exc})") from None
    return load_graph(config)


def _read_device(path: str) -> SimDevice:
    try:
        config = json.loads(Path(path).read_text())
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON ({exc})") from None
    try:
        return load_device(config)
    except ConfigError as exc:
        raise InputError(str(exc)) from None


def _read_state(path: str, graph: CalGraph | None) -> StateStore:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None
    try:
        return StateStore.restore(text, graph)
    except CorruptSnapshot as exc:
        raise InputError(f"{path}: {exc}") from None


# -- session ----------------------------------------------------------------


class Session:
    """Graph + device + state store + engine, and the artifacts they produce."""

    def __init__(self, graph_path: str, device_path: str, state_path: str | None = None):
        graph = _read_graph(graph_path)
        device = _read_device(device_path)
        store = _read_state(state_path, graph) if state_path else StateStore(graph)
        if store.saved_at is not None:
            device.resume_at(store.saved_at)
        self.engine = Engine(graph, store, device)
        self.last_report: MaintainReport | None = None
        self.last_error: EngineError | None = None

    @property
    def graph(self) -> CalGraph:
        return self.engine.graph

    @property
    def device(self) -> SimDevice:
        return self.engine.device

    @property
    def store(self) -> StateStore:
        return self.engine.store

    def maintain(self, node_id: str) -> MaintainReport:
        self.last_error = None
        try:
            self.last_report = self.engine.maintain(node_id)
        except EngineError as exc:
            self.last_error = exc
            self.last_report = exc.report
            raise
        return self.last_report

    def write_artifacts(self, out: str | Path) -> None:
        out = Path(out)
        scans = out / "scans"
        scans.mkdir(parents=True, exist_ok=True)
        self.engine.log.write(out / "events.jsonl")
        (out / "state.jsonl").write_text(self.store.persist(self.device.clock.now))
        for rec in self.engine.scans:
            data = rec.data
            lines = [
                f"# node {rec.node}",
                f"# purpose {rec.purpose}",
                f"# kind {data.kind} shots {data.shots} repeats {data.repeats}",
            ]
            lines += [f"{x:.10g} {y:.10g}" for x, y in zip(data.points, data.values)]
            (scans / f"{rec.index:04d}_{rec.node}_{rec.purpose}.txt").write_text("\n".join(lines) + "\n")


# -- printing ---------------------------------------------------------------


def _fmt_foms(foms: dict[str, float]) -> str:
    return " ".join(f"{k}={v:.4g}" for k, v in foms.items())


def status_rows(store: StateStore, ids, now: float | None) -> list[str]:
    rows = [f"{'node':<24} {'status':<17} {'age_s':>10} {'version':>7}  figures of merit"]
    for node_id in ids:
        rec: NodeRecord = store.record(node_id)
        if rec.last_pass_time is None or now is None:
            age = "-"
        else:
            age = f"{now - rec.last_pass_time:.1f}"
        rows.append(f"{node_id:<24} {rec.status.value:<17} {age:>10} {rec.cal_version:>7}  "
                    f"{_fmt_foms(rec.last_figures_of_merit)}")
    return rows


def report_lines(report: MaintainReport, elapsed: float) -> list[str]:
    return [
        f"maintain {report.target}: {'success' if report.success else 'aborted'}",
        f"  visited: " + ", ".join(f"{n}:{a}" for n, a in report.visited),
        f"  check_data={report.count('check_data')} calibrate={report.count('calibrate')} "
        f"diagnose={report.count('diagnose')}",
        f"  experiments_run={report.experiments_run} virtual_time_s={elapsed:.4f}",
    ]


# -- scenarios --------------------------------------------------------------

_OPS = {
    "==": operator.eq, "!=": operator.ne,
    "<": operator.lt, "<=": operator.le, ">": operator.gt, ">=": operator.ge,
}
_COUNTERS = {"calibrates": "calibrate", "check_datas": "check_data", "diagnoses": "diagnose"}
_FAULTS = {"corrupt_param": (3, 3), "flatline_readout": (0, None)}


@dataclass(frozen=True)
class Step:
    index: int
    line: int
    verb: str
    args: tuple[str, ...]
    text: str


class ScenarioParseError(InputError):
    def __init__(self, line: int, message: str):
        super().__init__(f"scenario line {line}: {message}")
        self.line = line


class AssertionFailed(OptimusError):
    def __init__(self, step: Step, detail: str):
        super().__init__(f"step {step.index} (line {step.line}) failed: {step.text} [{detail}]")
        self.step = step


def _number(token: str, line: int) -> float:
    try:
        value = float(token)
    except ValueError:
        raise ScenarioParseError(line, f"expected a number, got {token!r}") from None
    if not math.isfinite(value):
        raise ScenarioParseError(line, f"expected a finite number, got {token!r}")
    return value


def parse_scenario(text: str) -> list[Step]:
    """One step per line; blank lines and ``#`` comments are ignored."""
    steps: list[Step] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        try:
            tokens = shlex.split(raw, comments=True)
        except ValueError as exc:
            raise ScenarioParseError(lineno, str(exc)) from None
        if not tokens:
            continue
        verb, args = tokens[0], tuple(tokens[1:])
        n = len(args)
        if verb == "advance":
            if n != 1 or _number(args[0], lineno) < 0:
                raise ScenarioParseError(lineno, "usage: advance <seconds>=0+")
        elif verb == "jump":
            if n != 2 or "." not in args[0]:
                raise ScenarioParseError(lineno, "usage: jump <qubit>.<param> <delta>")
            _number(args[1], lineno)
        elif verb == "fault":
            if n < 1 or args[0] not in _FAULTS:
                raise ScenarioParseError(lineno, f"usage: fault {{{'|'.join(_FAULTS)}}} ...")
            lo, hi = _FAULTS[args[0]]
            if n - 1 < lo or (hi is not None and n - 1 > hi):
                raise ScenarioParseError(lineno, f"wrong number of arguments for fault {args[0]}")
            if args[0] == "corrupt_param":
                _number(args[3], lineno)
        elif verb == "maintain":
            if not (n == 1 or (n == 3 and args[1] == "expect")):
                raise ScenarioParseError(lineno, "usage: maintain <node> [expect <ErrorName>]")
        elif verb in ("calibrate", "check_data", "check_state"):
            if n != 1:
                raise ScenarioParseError(lineno, f"usage: {verb} <node>")
        elif verb == "assert":
            if n < 3 or args[-2] not in _OPS:
                raise ScenarioParseError(lineno, "usage: assert <quantity> <op> <value>")
        else:
            raise ScenarioParseError(lineno, f"unknown step {verb!r}")
        steps.append(Step(len(steps) + 1, lineno, verb, args, raw.strip()))
    return steps


class ScenarioRunner:
    def __init__(self, session: Session):
        self.session = session

    def run(self, steps: list[Step]) -> None:
        for step in steps:
            getattr(self, f"_do_{step.verb}")(step)

    def _node(self, step: Step, node_id: str) -> str:
        if node_id not in self.session.graph:
            raise AssertionFailed(step, f"unknown node {node_id!r}")
        return node_id

    def _do_advance(self, step):
        self.session.device.advance_and_drift(float(step.args[0]))

    def _do_jump(self, step):
        qubit, param = step.args[0].split(".", 1)
        dev = self.session.device
        try:
            dev.schedule_jump(Jump(dev.clock.now, qubit, param, float(step.args[1])))
        except (KeyError, ValueError) as exc:
            raise AssertionFailed(step, str(exc)) from None

    def _do_fault(self, step):
        kind, *rest = step.args
        if kind == "corrupt_param":
            rest[2] = float(rest[2])
        try:
            inject_fault(self.session.device, self.session.store, kind, *rest)
        except KeyError as exc:
            raise AssertionFailed(step, str(exc)) from None

    def _do_maintain(self, step):
        node = self._node(step, step.args[0])
        expect = step.args[2] if len(step.args) == 3 else None
        try:
            self.session.maintain(node)
        except EngineError as exc:
            if expect != type(exc).__name__:
                raise
            return
        if expect is not None:
            raise AssertionFailed(step, f"expected {expect}, maintain succeeded")

    def _do_calibrate(self, step):
        node = self._node(step, step.args[0])
        try:
            outcome = self.session.engine.calibrate(node)
        except EngineError as exc:
            self.session.last_error = exc
            raise
        if not outcome.success:
            raise CalibrationFailed(node, outcome.figures_of_merit)

    def _do_check_data(self, step):
        self.session.engine.check_data(self._node(step, step.args[0]))

    def _do_check_state(self, step):
        self.session.engine.check_state(self._node(step, step.args[0]))

    def _quantity(self, step: Step, tokens: list[str]):
        s = self.session
        head, rest = tokens[0], tokens[1:]
        if head in _COUNTERS or head == "experiments":
            if rest or s.last_report is None:
                raise AssertionFailed(step, f"{head} needs a prior maintain step")
            if head == "experiments":
                return s.last_report.experiments_run
            return s.last_report.count(_COUNTERS[head])
        if head == "now" and not rest:
            return s.device.clock.now
        if head == "all_pass" and not rest:
            return "true" if s.engine.all_pass() else "false"
        if head == "error" and not rest:
            return type(s.last_error).__name__ if s.last_error else "none"
        if head == "status" and len(rest) == 1:
            return s.store.status(self._node(step, rest[0])).value
        if head == "state" and len(rest) == 1:
            return "pass" if s.engine.check_state(self._node(step, rest[0]), log=False) else "fail"
        if head == "calibrated" and len(rest) == 1:
            return s.store.cal_version(self._node(step, rest[0]))
        if head == "param" and len(rest) == 2:
            value = s.store.param(self._node(step, rest[0]), rest[1])
            if value is None:
                raise AssertionFailed(step, f"{rest[0]} has no parameter {rest[1]!r}")
            return value
        raise AssertionFailed(step, f"unknown quantity {' '.join(tokens)!r}")

    def _do_assert(self, step):
        *lhs, op, rhs = step.args
        actual = self._quantity(step, lhs)
        if isinstance(actual, str):
            expected = rhs
            if op not in ("==", "!="):
                raise AssertionFailed(step, f"{op} needs a numeric quantity")
        else:
            try:
                expected = float(rhs)
            except ValueError:
                raise AssertionFailed(step, f"{rhs!r} is not a number") from None
        if not _OPS[op](actual, expected):
            raise AssertionFailed(step, f"actual {actual}")


# -- commands ---------------------------------------------------------------


def cmd_validate(args) -> int:
    graph = _read_graph(args.graph)
    edges = graph.edges()
    print(f"valid graph: {len(graph)} nodes, {len(edges)} edges")
    print("edges (node -> dependency):")
    for node, dep in edges:
        print(f"  {node} -> {dep}")
    print("topological order:")
    for i, node in enumerate(topological_order(graph), start=1):
        print(f"  {i:>3} {node}")
    return EXIT_OK


def cmd_maintain(args) -> int:
    session = Session(args.graph, args.device, args.state)
    if args.target not in session.graph:
        raise InputError(f"unknown target node {args.target!r}")
    start = session.device.clock.now
    code = EXIT_OK
    try:
        session.maintain(args.target)
    except EngineError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        code = engine_exit_code(exc)
    session.write_artifacts(args.out)
    if session.last_report is not None:
        print("\n".join(report_lines(session.last_report, session.device.clock.now - start)))
    print("\n".join(status_rows(session.store, session.graph, session.device.clock.now)))
    return code


def cmd_status(args) -> int:
    store = _read_state(args.state, None)
    print(f"snapshot time: {store.saved_at if store.saved_at is not None else '-'}")
    print("\n".join(status_rows(store, store.records, store.saved_at)))
    return EXIT_OK


def cmd_scenario(args) -> int:
    try:
        text = Path(args.script).read_text()
    except OSError as exc:
        raise InputError(f"cannot read {args.script}: {exc.strerror}") from None
    steps = parse_scenario(text)
    session = Session(args.graph, args.device, args.state)
    code = EXIT_OK
    try:
        ScenarioRunner(session).run(steps)
    except AssertionFailed as exc:
        print(f"assertion failed: {exc}", file=sys.stderr)
        code = EXIT_ASSERT
    except EngineError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        code = engine_exit_code(exc)
    session.write_artifacts(args.out)
    print(f"scenario {args.script}: {len(steps)} steps, exit {code}")
    print("\n".join(status_rows(session.store, session.graph, session.device.clock.now)))
    return code


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="optimus", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a graph config and print its order")
    p.add_argument("graph")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("maintain", help="bring a target node in spec")
    p.add_argument("--graph", required=True)
    p.add_argument("--device", required=True)
    p.add_argument("--state", help="snapshot to resume from")
    p.add_argument("--target", required=True)
    p.add_argument("--out", required=True, help="artifact directory")
    p.set_defaults(func=cmd_maintain)

    p = sub.add_parser("status", help="print the status table of a snapshot")
    p.add_argument("--state", required=True)
    p.set_defaults(func=cmd_status)

    p = sub.add_parser("scenario", help="run a scripted scenario")
    p.add_argument("script")
    p.add_argument("--graph", required=True)
    p.add_argument("--device", required=True)
    p.add_argument("--state", help="snapshot to resume from")
    p.add_argument("--out", required=True, help="artifact directory")
    p.set_defaults(func=cmd_scenario)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (GraphError, ConfigError) as exc:
        print(f"invalid graph: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INVALID_GRAPH
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
