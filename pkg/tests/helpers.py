"""Shared builders for synthetic graphs used by the property tests."""

from __future__ import annotations

from hypothesis import strategies as st

from optimus.graph import NodeSpec, ScanTemplate

CHECK = ScanTemplate("x", (0.0, 1.0), 10)
CAL = ScanTemplate("x", (0.0, 1.0, 2.0), 10)


def spec(node_id: str, deps=(), timeout: float = 100.0, behavior: str = "fake", **kw) -> NodeSpec:
    return NodeSpec(node_id, tuple(deps), ("value",), timeout, {}, CHECK, CAL, behavior, **kw)


@st.composite
def dags(draw, min_nodes: int = 0, max_nodes: int = 50):
    """(ids in declaration order, deps per id) for a random DAG.

    Nodes are created in a hidden topological order and then declared in a
    random permutation, so declaration order need not respect dependencies.
    """
    n = draw(st.integers(min_nodes, max_nodes))
    names = [f"n{i}" for i in range(n)]
    deps = {}
    for i, name in enumerate(names):
        if i == 0:
            deps[name] = []
            continue
        chosen = draw(st.lists(st.integers(0, i - 1), max_size=min(i, 4), unique=True))
        deps[name] = [names[j] for j in chosen]
    order = draw(st.permutations(names))
    return list(order), deps


def dag_specs(order, deps, **kw) -> list[NodeSpec]:
    return [spec(n, deps[n], **kw) for n in order]
