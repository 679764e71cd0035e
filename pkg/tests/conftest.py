import os
from pathlib import Path

import numpy as np
import pytest

from dagcn.graphs import Dataset, Graph

REPO = Path(__file__).resolve().parents[1]
DATA_ROOT = Path(os.environ.get("DAGCN_DATA", REPO / "data"))


def dataset_dir(name: str) -> Path:
    return DATA_ROOT / name


@pytest.fixture
def mutag_dir() -> Path:
    path = dataset_dir("MUTAG")
    if not (path / "MUTAG_A.txt").exists():
        pytest.fail(f"MUTAG not found under {path}")
    return path


def write_tu(directory: Path, name: str, edges, indicator, graph_labels, node_labels=None):
    directory.mkdir(parents=True, exist_ok=True)
    (directory / f"{name}_A.txt").write_text("".join(f"{u}, {v}\n" for u, v in edges))
    (directory / f"{name}_graph_indicator.txt").write_text("".join(f"{g}\n" for g in indicator))
    (directory / f"{name}_graph_labels.txt").write_text("".join(f"{g}\n" for g in graph_labels))
    if node_labels is not None:
        (directory / f"{name}_node_labels.txt").write_text("".join(f"{x}\n" for x in node_labels))
    return directory


@pytest.fixture
def toy_tu(tmp_path) -> Path:
    """Two graphs: a triangle (label 5) and a 2-node edge (label -1)."""
    return write_tu(tmp_path / "TOY", "TOY",
                    edges=[(1, 2), (2, 1), (2, 3), (3, 1), (4, 5)],
                    indicator=[1, 1, 1, 2, 2],
                    graph_labels=[5, -1],
                    node_labels=[0, 2, 2, 7, 0])


def make_toy_dataset(n_graphs: int = 10, seed: int = 0, feature_dim: int = 3) -> Dataset:
    """Balanced binary set: paths (label 0) versus stars (label 1)."""
    rng = np.random.default_rng(seed)
    graphs = []
    for i in range(n_graphs):
        n = int(rng.integers(3, 7))
        adj = np.zeros((n, n), dtype=np.int8)
        label = i % 2
        for j in range(1, n):
            other = j - 1 if label == 0 else 0
            adj[j, other] = adj[other, j] = 1
        x = np.zeros((n, feature_dim))
        x[np.arange(n), rng.integers(0, feature_dim, size=n)] = 1.0
        graphs.append(Graph(adj, x, label))
    return Dataset("toy", graphs, 2, feature_dim, {0: 0, 1: 1})


@pytest.fixture
def toy_dataset() -> Dataset:
    return make_toy_dataset()


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def criterion(request):
    """Record one PASS/FAIL line per acceptance criterion for the terminal summary."""
    state = {}

    def record(number: int, text: str):
        state["line"] = (number, text)

    yield record
    if "line" in state:
        number, text = state["line"]
        status = "PASS" if getattr(request.node, "call_passed", False) else "FAIL"
        ACCEPTANCE_LINES.append((number, f"criterion {number}: {status} {text}"))


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    if report.when == "call":
        item.call_passed = report.passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
