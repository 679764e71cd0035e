"""Independent oracles for the engine and the model.

``reference_forward`` deliberately shares no code with :mod:`dagcn.autodiff`
or :mod:`dagcn.model`: it works on nested Python lists with explicit loops.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tape
from .graphs import Graph
from .model import ModelConfig, ModelParams, init_params, model_forward
from .training import cross_entropy_loss

FORWARD_TOL = 1e-10
GRAD_TOL = 1e-4
PERMUTATION_TOL = 1e-9
FD_EPS = 1e-5
# guards 0/0 for entries where both gradients vanish (dead ReLU paths)
GRAD_FLOOR = 1e-12


# ---------------------------------------------------------------- scalar oracle

def _zeros(rows, cols):
    return [[0.0] * cols for _ in range(rows)]


def _mm(a, b):
    rows, inner, cols = len(a), len(b), len(b[0])
    out = _zeros(rows, cols)
    for i in range(rows):
        for j in range(cols):
            s = 0.0
            for t in range(inner):
                s += a[i][t] * b[t][j]
            out[i][j] = s
    return out


def _tr(a):
    return [[a[i][j] for i in range(len(a))] for j in range(len(a[0]))]


def _apply(a, fn):
    return [[fn(x) for x in row] for row in a]


def _relu(x):
    return x if x > 0 else 0.0


def _softmax_row(row):
    top = max(row)
    e = [math.exp(x - top) for x in row]
    s = sum(e)
    return [x / s for x in e]


@dataclass
class ReferenceTranscript:
    adjacency: list[list[int]]
    features: list[list[float]]
    params: dict[str, list[list[float]]]
    config: ModelConfig
    values: dict[str, list[list[float]]] = field(default_factory=dict)
    tolerance: float = FORWARD_TOL


def reference_forward(adjacency, features, params: dict, config: ModelConfig) -> ReferenceTranscript:
    """Recompute every intermediate with scalar loops.

    ``params`` maps parameter names to nested lists (row-vector convention,
    same names as :func:`dagcn.model.param_shapes`).
    """
    n = len(adjacency)
    k, h = config.k, config.hidden
    phi = _relu if config.nonlinearity == "relu" else math.tanh
    out: dict[str, list[list[float]]] = {}

    # (A + I) D^-1: column j divided by the degree of node j (self-loop included)
    a_t = [[float(adjacency[i][j]) + (1.0 if i == j else 0.0) for j in range(n)]
           for i in range(n)]
    deg = [sum(a_t[i][j] for i in range(n)) for j in range(n)]
    a_norm = [[a_t[i][j] / deg[j] for j in range(n)] for i in range(n)]
    out["A_norm"] = a_norm

    x_proj = _mm(features, params["P"])
    out["X_proj"] = x_proj
    gammas = [x_proj]
    layer_in = x_proj
    for layer in range(1, config.m + 1):
        w = params[f"agc{layer}.W"]
        hops = []
        cur = layer_in
        for i in range(1, k + 1):
            cur = _apply(_mm(a_norm, _mm(cur, w)), phi)
            hops.append(cur)
            out[f"agc{layer}.H{i}"] = cur
        alpha = []
        for v in range(n):
            if config.hop_attention == "additive":
                wa, va = params[f"agc{layer}.Wa"], params[f"agc{layer}.wa"]
                scores = []
                for hop in hops:
                    s = 0.0
                    for j in range(h):
                        z = 0.0
                        for t in range(h):
                            z += hop[v][t] * wa[t][j]
                        s += math.tanh(z) * va[j][0]
                    scores.append(s)
            else:
                scores = [params[f"agc{layer}.hop_logits"][i][0] for i in range(k)]
            alpha.append(_softmax_row(scores))
        out[f"agc{layer}.alpha"] = alpha
        gamma = _zeros(n, h)
        for v in range(n):
            for j in range(h):
                s = 0.0
                for i in range(k):
                    s += alpha[v][i] * hops[i][v][j]
                gamma[v][j] = s
        out[f"agc{layer}.gamma"] = gamma
        gammas.append(gamma)
        layer_in = [[gamma[v][j] + x_proj[v][j] for j in range(h)] for v in range(n)]

    concat = [[x for g in gammas for x in g[v]] for v in range(n)]
    dense = _mm(concat, params["dense.D"])
    bias = params["dense.bias"][0]
    g_mat = [[phi(dense[v][j] + bias[j]) for j in range(h)] for v in range(n)]
    out["G"] = g_mat

    s_mat = _mm(params["pool.u2"], _apply(_mm(params["pool.u1"], _tr(g_mat)), math.tanh))
    out["S"] = s_mat
    b_mat = [_softmax_row(row) for row in s_mat]
    out["B"] = b_mat
    m_mat = _mm(b_mat, g_mat)
    out["M"] = m_mat

    flat = [[x for row in m_mat for x in row]]
    logits = _mm(flat, params["cls.Z"])
    logits = [[logits[0][j] + params["cls.C"][0][j] for j in range(config.num_classes)]]
    out["logits"] = logits
    out["probs"] = [_softmax_row(logits[0])]

    return ReferenceTranscript([list(r) for r in adjacency], [list(r) for r in features],
                               params, config, out)


def transcript_instance() -> tuple[Graph, ModelParams, ModelConfig]:
    """Fixed 3-node path graph with hand-set small-integer parameters."""
    config = ModelConfig(feature_dim=2, num_classes=2, k=2, m=1, hidden=2, r=2)
    adjacency = np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]])
    features = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]])
    raw = {
        "P": [[1, -1], [2, 0]],
        "agc1.W": [[1, 0], [1, -1]],
        "agc1.Wa": [[1, 0], [0, 1]],
        "agc1.wa": [[1], [-1]],
        "dense.D": [[1, 0], [0, 1], [1, 1], [0, -1]],
        "dense.bias": [[0, 0]],
        "pool.u1": [[1, 0], [0, -1]],
        "pool.u2": [[1, 1], [-1, 0]],
        "cls.Z": [[1, 0], [0, 1], [-1, 0], [0, 2]],
        "cls.C": [[0, 0]],
    }
    params = ModelParams({k: ad.Tensor(v, requires_grad=True) for k, v in raw.items()})
    return Graph(adjacency, features, 0), params, config


def params_as_lists(params: ModelParams) -> dict[str, list[list[float]]]:
    return {k: v.values.tolist() for k, v in params.items()}


def compare_with_reference(graph: Graph, params: ModelParams,
                           config: ModelConfig) -> dict[str, float]:
    """Max absolute deviation between engine and oracle, per intermediate."""
    trace: dict = {}
    model_forward(graph, params, config, trace=trace)
    trace["A_norm"] = graph.norm_adjacency
    ref = reference_forward(graph.adjacency.tolist(), graph.features.tolist(),
                            params_as_lists(params), config)
    return {key: float(np.max(np.abs(np.asarray(val) - trace[key])))
            for key, val in ref.values.items()}


# ---------------------------------------------------------------- gradient check

def random_graph(rng: np.random.Generator, n: int, feature_dim: int, num_classes: int,
                 p_edge: float = 0.4) -> Graph:
    upper = np.triu(rng.random((n, n)) < p_edge, k=1)
    adj = (upper | upper.T).astype(np.int8)
    x = np.zeros((n, feature_dim))
    x[np.arange(n), rng.integers(0, feature_dim, size=n)] = 1.0
    return Graph(adj, x, int(rng.integers(0, num_classes)))


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = GRAD_FLOOR) -> float:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


@dataclass
class GradcheckReport:
    seed: int
    errors: dict[str, float]
    tolerance: float = GRAD_TOL

    @property
    def worst(self) -> float:
        return max(self.errors.values())

    @property
    def passed(self) -> bool:
        return self.worst <= self.tolerance

    def lines(self) -> list[str]:
        rows = [f"gradcheck seed={self.seed} tol={self.tolerance:g}"]
        for name, err in self.errors.items():
            flag = "ok" if err <= self.tolerance else "FAIL"
            rows.append(f"  {name:<18} max_rel_err={err:.3e} {flag}")
        return rows


def gradcheck_model(config: ModelConfig, seed: int, n: int = 6,
                    eps: float = FD_EPS) -> GradcheckReport:
    rng = np.random.default_rng(seed)
    graph = random_graph(rng, n, config.feature_dim, config.num_classes)
    params = init_params(config, seed)
    # nonzero biases so their gradients are exercised away from the origin
    for name, t in params.items():
        if not np.any(t.values):
            t.values[...] = rng.uniform(-0.5, 0.5, size=t.shape)

    params.zero_grad()
    with Tape() as tape:
        loss = cross_entropy_loss(model_forward(graph, params, config), graph.label)
    tape.backward(loss)
    analytic = {name: (t.grad if t.grad is not None else np.zeros(t.shape)).copy()
                for name, t in params.items()}

    def f(_):
        return cross_entropy_loss(model_forward(graph, params, config), graph.label)

    errors = {}
    for name, t in params.items():
        numeric = ad.finite_difference_grad(f, t, eps)
        errors[name] = relative_error(analytic[name], numeric)
    params.zero_grad()
    return GradcheckReport(seed, errors)


# ---------------------------------------------------------------- permutation

@dataclass
class PermutationResult:
    trials: int
    worst: float
    tolerance: float = PERMUTATION_TOL

    @property
    def passed(self) -> bool:
        return self.worst <= self.tolerance


def permutation_deviation(graph: Graph, perm, params: ModelParams, config: ModelConfig) -> float:
    p0 = model_forward(graph, params, config).values
    p1 = model_forward(graph.permuted(perm), params, config).values
    return float(np.max(np.abs(p0 - p1)))


def permutation_suite(trials: int, seed: int, config: ModelConfig | None = None,
                      max_nodes: int = 12) -> PermutationResult:
    if trials < 1:
        raise ValueError("trials must be >= 1")
    config = config or ModelConfig(feature_dim=4, num_classes=3, k=3, m=2, hidden=8, r=4)
    rng = np.random.default_rng(seed)
    params = init_params(config, seed)
    worst = 0.0
    for _ in range(trials):
        n = int(rng.integers(1, max_nodes + 1))
        graph = random_graph(rng, n, config.feature_dim, config.num_classes,
                             p_edge=float(rng.uniform(0.1, 0.7)))
        graph = Graph(graph.adjacency, rng.normal(size=graph.features.shape), graph.label)
        worst = max(worst, permutation_deviation(graph, rng.permutation(n), params, config))
    return PermutationResult(trials, worst)
