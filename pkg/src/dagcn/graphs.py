"""TU-format dataset loading, adjacency normalization and fold splitting."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np

logger = logging.getLogger(__name__)

DEFAULT_DEGREE_CAP = 25


class TUFormatError(ValueError):
    """Malformed TU file; carries the file name and 1-based line number."""

    def __init__(self, path: Path | str, line: int, message: str):
        self.path = Path(path)
        self.line = line
        super().__init__(f"{self.path.name}:{line}: {message}")


class ConfigurationError(ValueError):
    pass


class StratificationError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Graph:
    adjacency: np.ndarray
    features: np.ndarray
    label: int
    node_labels: np.ndarray | None = None

    def __post_init__(self):
        a = self.adjacency
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError(f"adjacency must be square, got {a.shape}")
        if self.features.shape[0] != a.shape[0]:
            raise ValueError(
                f"features have {self.features.shape[0]} rows for {a.shape[0]} nodes")

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]

    @cached_property
    def norm_adjacency(self) -> np.ndarray:
        return normalize_adjacency(self.adjacency)

    def permuted(self, perm: Sequence[int]) -> "Graph":
        """Relabel nodes so that new node ``i`` is old node ``perm[i]``."""
        p = np.asarray(perm)
        nl = None if self.node_labels is None else self.node_labels[p]
        return Graph(self.adjacency[np.ix_(p, p)], self.features[p], self.label, nl)


@dataclass
class Dataset:
    name: str
    graphs: list[Graph]
    num_classes: int
    feature_dim: int
    label_map: dict[int, int] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.graphs)

    @property
    def labels(self) -> np.ndarray:
        return np.array([g.label for g in self.graphs], dtype=np.int64)

    def node_counts(self) -> np.ndarray:
        return np.array([g.n for g in self.graphs], dtype=np.int64)

    def stats(self) -> dict:
        counts = self.node_counts()
        hist = np.bincount(self.labels, minlength=self.num_classes)
        inverse = {v: k for k, v in self.label_map.items()}
        return {
            "name": self.name,
            "graphs": len(self.graphs),
            "max_nodes": int(counts.max()),
            "avg_nodes": float(counts.mean()),
            "feature_dim": self.feature_dim,
            "classes": {inverse.get(i, i): int(c) for i, c in enumerate(hist)},
        }


def normalize_adjacency(a: np.ndarray) -> np.ndarray:
    """Return (A + I) D^-1, the column-stochastic propagation operator."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"adjacency must be square, got {a.shape}")
    if not np.array_equal(a, a.T):
        raise ValueError("adjacency must be symmetric")
    if np.any(np.diag(a) != 0):
        raise ValueError("adjacency must have a zero diagonal")
    if not np.all((a == 0) | (a == 1)):
        raise ValueError("adjacency must be binary")
    a_tilde = a + np.eye(a.shape[0])
    return a_tilde / a_tilde.sum(axis=0, keepdims=True)


def _read_ints(path: Path, per_line: int) -> np.ndarray:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            tokens = [t.strip() for t in line.split(",")]
            if len(tokens) != per_line:
                raise TUFormatError(path, lineno,
                                    f"expected {per_line} value(s), got {len(tokens)}")
            try:
                rows.append([int(t) for t in tokens])
            except ValueError:
                raise TUFormatError(path, lineno, f"non-integer token in {line!r}") from None
            rows[-1].append(lineno)
    return np.array(rows, dtype=np.int64).reshape(-1, per_line + 1)


def build_features(node_labels: np.ndarray | None, scheme: str = "one-hot", *,
                   alphabet: Sequence[int] | None = None,
                   adjacency: np.ndarray | None = None,
                   degree_cap: int = DEFAULT_DEGREE_CAP) -> np.ndarray:
    """Node feature matrix for one graph.

    ``one-hot`` encodes node labels over ``alphabet`` (the dataset-wide sorted
    label set). ``degree`` one-hot encodes node degree into ``degree_cap + 1``
    buckets, the last one collecting every degree >= ``degree_cap``.
    """
    if scheme == "one-hot":
        if node_labels is None:
            raise ConfigurationError("one-hot features requested but node labels are absent")
        alphabet = np.unique(node_labels) if alphabet is None else np.asarray(alphabet)
        cols = np.searchsorted(alphabet, node_labels)
        if np.any(cols >= len(alphabet)) or np.any(alphabet[np.minimum(cols, len(alphabet) - 1)] != node_labels):
            raise ConfigurationError("node label outside the dataset alphabet")
        x = np.zeros((len(node_labels), len(alphabet)))
        x[np.arange(len(node_labels)), cols] = 1.0
        return x
    if scheme == "degree":
        if adjacency is None:
            raise ConfigurationError("degree features need the adjacency matrix")
        deg = np.minimum(np.asarray(adjacency).sum(axis=1).astype(np.int64), degree_cap)
        x = np.zeros((len(deg), degree_cap + 1))
        x[np.arange(len(deg)), deg] = 1.0
        return x
    raise ConfigurationError(f"unknown feature scheme {scheme!r}")


def load_tu_dataset(directory: Path | str, name: str, *, features: str = "auto",
                    degree_cap: int = DEFAULT_DEGREE_CAP) -> Dataset:
    """Load ``name`` from a TU-layout directory.

    ``features`` is ``one-hot`` (node labels), ``degree``, or ``auto`` (node
    labels when the file exists, else degree buckets).
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"dataset directory not found: {directory}")

    def path(suffix):
        return directory / f"{name}_{suffix}.txt"

    for suffix in ("A", "graph_indicator", "graph_labels"):
        if not path(suffix).is_file():
            raise FileNotFoundError(f"missing TU file: {path(suffix)}")

    indicator = _read_ints(path("graph_indicator"), 1)
    graph_of = indicator[:, 0]
    num_nodes = len(graph_of)
    graph_labels_raw = _read_ints(path("graph_labels"), 1)[:, 0]
    num_graphs = len(graph_labels_raw)
    if num_nodes == 0:
        raise TUFormatError(path("graph_indicator"), 1, "no nodes")
    bad = np.nonzero((graph_of < 1) | (graph_of > num_graphs))[0]
    if len(bad):
        raise TUFormatError(path("graph_indicator"), int(indicator[bad[0], 1]),
                            f"graph id {graph_of[bad[0]]} outside 1..{num_graphs}")
    if np.any(np.diff(graph_of) < 0):
        i = int(np.nonzero(np.diff(graph_of) < 0)[0][0]) + 1
        raise TUFormatError(path("graph_indicator"), int(indicator[i, 1]),
                            "graph ids must be non-decreasing")

    node_labels = None
    if path("node_labels").is_file():
        nl = _read_ints(path("node_labels"), 1)
        if len(nl) != num_nodes:
            raise TUFormatError(path("node_labels"), len(nl),
                                f"{len(nl)} node labels for {num_nodes} nodes")
        node_labels = nl[:, 0]

    if features == "auto":
        features = "one-hot" if node_labels is not None else "degree"
    if features == "one-hot" and node_labels is None:
        raise ConfigurationError(f"{name}: one-hot features need {path('node_labels').name}")

    # node t (0-based) lives in graph graph_of[t]-1 at local index t - start
    starts = np.searchsorted(graph_of, np.arange(1, num_graphs + 1))
    ends = np.searchsorted(graph_of, np.arange(1, num_graphs + 1), side="right")
    adjacencies = [np.zeros((e - s, e - s), dtype=np.int8) for s, e in zip(starts, ends)]

    edges = _read_ints(path("A"), 2)
    for u, v, lineno in edges:
        if not (1 <= u <= num_nodes and 1 <= v <= num_nodes):
            raise TUFormatError(path("A"), int(lineno), f"node id outside 1..{num_nodes}")
        gu, gv = graph_of[u - 1], graph_of[v - 1]
        if gu != gv:
            raise TUFormatError(path("A"), int(lineno),
                                f"edge ({u}, {v}) crosses graphs {gu} and {gv}")
        if u == v:
            continue
        s = starts[gu - 1]
        adj = adjacencies[gu - 1]
        adj[u - 1 - s, v - 1 - s] = 1
        adj[v - 1 - s, u - 1 - s] = 1
    self_loops = int(np.sum(edges[:, 0] == edges[:, 1]))
    if self_loops:
        logger.warning("%s: dropped %d self-loop edge(s)", name, self_loops)

    label_values = np.unique(graph_labels_raw)
    label_map = {int(v): i for i, v in enumerate(label_values)}
    alphabet = np.unique(node_labels) if node_labels is not None else None

    graphs = []
    for gi in range(num_graphs):
        s, e = starts[gi], ends[gi]
        adj = adjacencies[gi]
        nl = node_labels[s:e] if node_labels is not None else None
        x = build_features(nl, features, alphabet=alphabet, adjacency=adj,
                           degree_cap=degree_cap)
        graphs.append(Graph(adj, x, label_map[int(graph_labels_raw[gi])], nl))

    empty = [i + 1 for i, g in enumerate(graphs) if g.n == 0]
    if empty:
        raise TUFormatError(path("graph_indicator"), 0, f"graphs without nodes: {empty[:5]}")
    feature_dim = graphs[0].features.shape[1]
    logger.info("loaded %s: %d graphs, %d classes, %d features",
                name, num_graphs, len(label_values), feature_dim)
    return Dataset(name, graphs, len(label_values), feature_dim, label_map)


def stratified_kfold(labels: Sequence[int] | Dataset, folds: int,
                     seed: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Seeded stratified k-fold split returning ``(train, test)`` index arrays."""
    if isinstance(labels, Dataset):
        labels = labels.labels
    labels = np.asarray(labels)
    if folds < 2:
        raise ValueError("folds must be >= 2")
    classes, counts = np.unique(labels, return_counts=True)
    for c, n in zip(classes, counts):
        if n < folds:
            raise StratificationError(
                f"class {c} has {n} member(s), fewer than {folds} folds")

    from sklearn.model_selection import StratifiedKFold

    splitter = StratifiedKFold(n_splits=folds, shuffle=True, random_state=seed)
    return [(np.sort(tr), np.sort(te))
            for tr, te in splitter.split(np.zeros(len(labels)), labels)]
