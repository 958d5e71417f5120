from __future__ import annotations

import json

import pytest

from optimus import Engine, StateStore, data_path, load_device, load_graph

GRAPH = data_path("graph_2q.json")
DEVICE = data_path("device_2q.json")
TARGET = "two_qubit_phase.q0-q1"

# criterion number -> (description, passed); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[str, bool]] = {}


def new_session(seed: int | None = None) -> Engine:
    graph = load_graph(GRAPH)
    config = json.loads(DEVICE.read_text())
    if seed is not None:
        config["seed"] = seed
    device = load_device(config)
    return Engine(graph, StateStore(graph), device)


def brought_up(seed: int | None = None) -> Engine:
    engine = new_session(seed)
    engine.maintain(TARGET)
    return engine


@pytest.fixture
def session() -> Engine:
    return new_session()


@pytest.fixture
def calibrated() -> Engine:
    return brought_up()


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        desc, ok = ACCEPTANCE[number]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] criterion {number:>2}: {desc}")
