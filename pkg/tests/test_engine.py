import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from optimus import Engine, StateStore, inject_fault
from optimus.errors import BadDataInCalibrate, DiagnoseError, MissingParameter, UnknownNode
from optimus.events import EVENT_KINDS
from optimus.graph import ancestors, build_graph, topological_order
from optimus.nodes import Classification
from optimus.state import FailureKind, NodeStatus
from fakes import REGISTRY, FakeDevice
from helpers import dag_specs, dags, spec

from conftest import TARGET


class TracingEngine(Engine):
    """Records when each recursive maintain call returns."""

    def __init__(self, *args, **kw):
        super().__init__(*args, **kw)
        self.returned: list[tuple[int, str]] = []

    def _maintain(self, node_id):
        super()._maintain(node_id)
        self.returned.append((len(self._trace), node_id))


def fake_engine(specs, broken=(), engine_cls=Engine):
    graph = build_graph(specs)
    device = FakeDevice(graph, broken)
    return engine_cls(graph, StateStore(graph), device, REGISTRY)


def settle(engine):
    """Calibrate everything once at t=0 so every node has a prior value."""
    for n in topological_order(engine.graph):
        engine.store.record_calibration(n, engine.clock.now, {"value": 1.0}, {})


def diamond(**kw):
    return [spec("A", **kw), spec("B", ["A"], **kw), spec("C", ["A"], **kw), spec("D", ["B", "C"], **kw)]


def events(engine, kind=None, start=0):
    return [e for e in engine.log.since(start) if kind is None or e.event == kind]


# -- check_state -------------------------------------------------------------


def test_unknown_node_fails_condition_one():
    e = fake_engine(diamond())
    assert e.check_state("A").condition == 1


def test_fresh_pass_with_current_versions_passes():
    e = fake_engine(diamond())
    settle(e)
    e.clock.advance(50.0)
    assert e.check_state("D")


def test_timeout_boundary_is_strict():
    e = fake_engine(diamond())
    settle(e)
    e.clock.advance(100.0)
    result = e.check_state("A")
    assert not result and result.condition == 1


def test_failed_calibrate_fails_condition_two():
    e = fake_engine(diamond())
    settle(e)
    e.store.record_failure("B", 0.0, FailureKind.CALIBRATE_FAILED)
    e.store.records["B"].status = NodeStatus.FAILED_UNRESOLVED
    # status alone makes condition 1 inapplicable only when the pass is still recorded
    e.store.records["B"].last_pass_time = 0.0
    assert e.check_state("B").condition == 2


def test_recalibrated_dependency_fails_condition_three_without_data():
    e = fake_engine(diamond())
    settle(e)
    e.store.record_calibration("B", 1.0, {"value": 2.0}, {})
    before = e.device.experiments
    result = e.check_state("D")
    assert (result.passed, result.condition) == (False, 3)
    assert "B" in result.reason
    assert e.device.experiments == before


def test_failing_ancestor_fails_condition_four():
    e = fake_engine([spec("A", timeout=10.0), spec("B", ["A"]), spec("C", ["B"])])
    settle(e)
    e.clock.advance(20.0)
    assert e.check_state("C").condition == 4
    assert e.check_state("B").condition == 4
    assert e.check_state("A").condition == 1


def test_check_state_logs_one_event_and_unknown_ids_raise():
    e = fake_engine(diamond())
    e.check_state("D")
    assert [ev.event for ev in e.log] == ["check_state"]
    with pytest.raises(UnknownNode):
        e.check_state("Z")


# -- diagnose -----------------------------------------------------------------


def test_diagnose_recalibrates_only_the_out_of_spec_dependency():
    e = fake_engine(diamond(), broken={"B"})
    settle(e)
    assert e.diagnose("D") == ["B"]
    assert e.store.cal_version("B") == 2 and e.store.cal_version("C") == 1


def test_diagnose_recurses_through_bad_data():
    e = fake_engine([spec("A"), spec("B", ["A"]), spec("C", ["B"])], broken={"A"})
    settle(e)
    assert e.diagnose("C") == ["A", "B"]
    assert not e.device.broken


def test_diagnose_with_healthy_dependencies_raises():
    e = fake_engine(diamond())
    settle(e)
    with pytest.raises(DiagnoseError) as err:
        e.diagnose("D")
    assert err.value.node_id == "D"
    assert err.value.checked == ["B", "C"]
    assert events(e)[-1].event == "error"


# -- maintain -----------------------------------------------------------------


def test_idle_maintain_costs_nothing():
    e = fake_engine(diamond())
    settle(e)
    report = e.maintain("D")
    assert report.experiments_run == 0
    assert report.visited == [("D", "check_state_pass")]


def test_single_mid_node_timeout_costs_one_check():
    specs = [spec("A"), spec("B", ["A"], timeout=10.0), spec("C", ["A"]), spec("D", ["B", "C"])]
    e = fake_engine(specs)
    settle(e)
    e.clock.advance(20.0)
    report = e.maintain("D")
    assert report.count("check_data") == 1 and report.count("calibrate") == 0
    assert report.count("check_data", "B") == 1
    assert all(e.check_state(n) for n in e.graph)


def test_bring_up_calibrates_each_ancestor_once_in_dependency_order():
    e = fake_engine(diamond())
    report = e.maintain("D")
    calibrated = [n for n, a in report.visited if a == "calibrate"]
    assert sorted(calibrated) == ["A", "B", "C", "D"]
    for n, d in e.graph.edges():
        assert calibrated.index(d) < calibrated.index(n)


def test_bad_data_in_calibrate_is_raised_with_partial_report():
    # B was never calibrated, so maintain calibrates it directly; its dependency is secretly broken
    e = fake_engine([spec("A"), spec("B", ["A"])], broken={"A"})
    e.store.record_calibration("A", 0.0, {"value": 1.0}, {})
    with pytest.raises(BadDataInCalibrate) as err:
        e.maintain("B")
    assert err.value.report.visited[-1] == ("B", "calibrate")
    assert not err.value.report.success


@st.composite
def scenarios(draw):
    order, deps = draw(dags(min_nodes=1, max_nodes=50))
    broken = draw(st.sets(st.sampled_from(order)))
    fresh = draw(st.booleans())
    statuses = draw(st.lists(st.sampled_from(["pass", "oos", "failed", "stale"]),
                             min_size=len(order), max_size=len(order)))
    ages = draw(st.lists(st.floats(0.0, 150.0), min_size=len(order), max_size=len(order)))
    target = draw(st.sampled_from(order))
    return order, deps, broken, fresh, dict(zip(order, zip(statuses, ages))), target


def prepare(order, deps, broken, fresh, knowledge):
    e = fake_engine(dag_specs(order, deps), broken, TracingEngine)
    if not fresh:
        e.clock.advance(150.0)
        for n in topological_order(e.graph):
            kind, age = knowledge[n]
            e.store.record_calibration(n, 150.0 - age, {"value": 1.0}, {})
        for n in order:
            kind, age = knowledge[n]
            if kind == "oos":
                e.store.record_failure(n, 150.0, FailureKind.OUT_OF_SPEC_OBSERVED)
            elif kind == "failed":
                e.store.record_failure(n, 150.0, FailureKind.CALIBRATE_FAILED)
            elif kind == "stale" and deps[n]:
                e.store.record_calibration(deps[n][0], 150.0, {"value": 1.0}, {})
    return e


@settings(max_examples=120, deadline=None)
@given(scenarios())
def test_maintain_properties_on_random_dags(case):
    order, deps, broken, fresh, knowledge, target = case
    e = prepare(order, deps, broken, fresh, knowledge)
    versions = {n: e.store.cal_version(n) for n in order}
    mark = len(e.log)
    report = e.maintain(target)

    # termination with success, and the post-condition holds without data
    assert report.success
    spent = e.device.experiments
    assert e.check_state(target, log=False)
    assert e.device.experiments == spent

    # ordering: a check_data on n only after maintain returned for each dependency
    returned_at = {}
    for pos, node in e.returned:
        returned_at.setdefault(node, pos)
    for pos, (node, action) in enumerate(report.visited):
        if action == "check_data" and node in returned_at and pos < returned_at[node]:
            for d in deps[node]:
                assert d in returned_at and returned_at[d] <= pos

    # calibration count bound
    cals = {n: report.count("calibrate", n) for n in order}
    for n in order:
        assert cals[n] <= 1 + sum(cals[a] for a in ancestors(e.graph, n))

    # diagnose never consults check_state
    depth = 0
    for ev in e.log.since(mark):
        if ev.event == "diagnose_enter":
            depth += 1
        elif ev.event == "diagnose_exit":
            depth -= 1
        elif ev.event == "check_state":
            assert depth == 0

    # versions never decrease
    assert all(e.store.cal_version(n) >= versions[n] for n in order)

    # zero-cost idle
    again = e.maintain(target)
    assert again.experiments_run == 0
    assert again.visited == [(target, "check_state_pass")]


@settings(max_examples=60, deadline=None)
@given(dags(min_nodes=1, max_nodes=50))
def test_bring_up_order_is_topological(dag):
    order, deps = dag
    e = fake_engine(dag_specs(order, deps))
    for target in order:
        e.maintain(target)
    calibrated = [ev.node for ev in e.log if ev.event == "calibrate"]
    assert sorted(calibrated) == sorted(order)
    pos = {n: i for i, n in enumerate(calibrated)}
    for n, d in e.graph.edges():
        assert pos[d] < pos[n]


# -- against the simulated device --------------------------------------------


def test_event_log_is_fixed_order_json(calibrated):
    lines = calibrated.log.to_jsonl().splitlines()
    for line in lines:
        assert list(json.loads(line)) == ["t", "event", "node", "outcome", "detail"]
    assert {ev.event for ev in calibrated.log} <= set(EVENT_KINDS)
    times = [ev.t for ev in calibrated.log]
    assert times == sorted(times)


def test_report_counts_device_experiments(session):
    before = session.device.experiments
    report = session.maintain(TARGET)
    assert report.experiments_run == session.device.experiments - before
    points = sum(ev.detail.get("points", 0) for ev in session.log)
    assert points == report.experiments_run


def test_missing_dependency_parameters(session):
    with pytest.raises(MissingParameter):
        session.calibrate("rabi_coarse.q0")


def test_check_data_sees_pi_length_drift(calibrated):
    truth = calibrated.device.truth("q0")
    truth.rabi_rate /= 1.10  # twice the coarse tolerance
    outcome = calibrated.check_data("rabi_coarse.q0")
    assert outcome.classification is Classification.OUT_OF_SPEC
    stored = calibrated.store.param("rabi_coarse.q0", "pi_length_ns")
    assert outcome.fitted_shift / stored == pytest.approx(0.10, abs=0.01)
    assert calibrated.store.status("rabi_coarse.q0") is NodeStatus.OUT_OF_SPEC


def test_flatlined_readout_gives_bad_data(calibrated):
    inject_fault(calibrated.device, calibrated.store, "flatline_readout")
    for node in ("spectroscopy.q1", "rabi_fine.q0", TARGET):
        assert calibrated.check_data(node).classification is Classification.BAD_DATA


def test_stored_coarse_pi_length_close_to_truth(calibrated):
    for q in ("q0", "q1"):
        truth = calibrated.device.truth(q).pi_length
        stored = calibrated.store.param(f"rabi_coarse.{q}", "pi_length_ns")
        assert abs(stored - truth) <= 1.0


def test_repeat_calibration_agrees_within_three_standard_errors(calibrated):
    node = "rabi_fine.q0"
    results = [calibrated.calibrate(node) for _ in range(2)]
    lengths = [r.params["pi_length_ns"] for r in results]
    sigmas = [r.figures_of_merit["rotation_stderr_rad"] * L / 3.141592653589793
              for r, L in zip(results, lengths)]
    assert abs(lengths[0] - lengths[1]) <= 3 * (sigmas[0] ** 2 + sigmas[1] ** 2) ** 0.5


def test_calibrate_with_grossly_detuned_drive_is_bad_data(calibrated):
    # 500 MHz off resonance is twenty Rabi rates for q0
    inject_fault(calibrated.device, calibrated.store, "corrupt_param", "spectroscopy.q0", "f_drive_ghz", 1.1)
    with pytest.raises(BadDataInCalibrate):
        calibrated.calibrate("rabi_coarse.q0")
    assert calibrated.store.status("rabi_coarse.q0") is NodeStatus.OUT_OF_SPEC


def test_corrupted_coarse_layer_breaks_the_next_layer(calibrated):
    inject_fault(calibrated.device, calibrated.store, "corrupt_param", "rabi_coarse.q0", "pi_length_ns", 3.0)
    with pytest.raises(BadDataInCalibrate):
        calibrated.calibrate("rabi_mid.q0")


def test_corrupted_q1_frequency_breaks_two_qubit_check(calibrated):
    inject_fault(calibrated.device, calibrated.store, "corrupt_param", "spectroscopy.q1", "f_drive_ghz", 1.02)
    assert calibrated.check_data(TARGET).classification is Classification.BAD_DATA


def test_two_qubit_time_close_to_truth(calibrated):
    assert calibrated.store.param(TARGET, "cz_time_ns") == pytest.approx(40.0, rel=0.02)


def test_spectroscopy_frequency_close_to_truth(calibrated):
    assert abs(calibrated.store.param("spectroscopy.q0", "f_drive_ghz") - 5.0) <= 1e-3


def test_same_seed_same_stored_frequency():
    from conftest import brought_up

    a, b = brought_up(), brought_up()
    assert a.store.param("spectroscopy.q0", "f_drive_ghz") == b.store.param("spectroscopy.q0", "f_drive_ghz")
