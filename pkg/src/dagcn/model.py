"""DAGCN forward computation.

Data flow for one graph with ``n`` nodes::

    X (n x c) --P--> X_proj (n x h)
    for each of m AGC layers:
        k hops of relu(A_norm @ H @ W), attention-mixed per node -> gamma_l
        next layer input = gamma_l + X_proj
    G = relu(concat(X_proj, gamma_1..gamma_m) @ D + bias)      (n x h)
    B = softmax_rows(u2 @ tanh(u1 @ G.T))                        (r x n)
    M = B @ G                                                    (r x h)
    probs = softmax(flatten(M) @ Z + C)                          (1 x L)

Row-vector convention throughout: a node representation is a row of ``H``,
so weight matrices multiply on the right.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .graphs import Graph

NONLINEARITIES = ("relu", "tanh")
HOP_ATTENTION = ("additive", "free")


@dataclass(frozen=True)
class ModelConfig:
    feature_dim: int
    num_classes: int
    k: int = 3
    m: int = 2
    hidden: int = 64
    r: int = 8
    nonlinearity: str = "relu"
    hop_attention: str = "additive"

    def __post_init__(self):
        for name in ("k", "m", "r", "hidden", "feature_dim", "num_classes"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.nonlinearity not in NONLINEARITIES:
            raise ValueError(f"nonlinearity must be one of {NONLINEARITIES}")
        if self.hop_attention not in HOP_ATTENTION:
            raise ValueError(f"hop_attention must be one of {HOP_ATTENTION}")

    def to_dict(self) -> dict:
        return asdict(self)


class ModelParams:
    """Named trainable matrices, iterated in a fixed declaration order."""

    def __init__(self, tensors: dict[str, Tensor]):
        self.tensors = dict(tensors)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self.tensors)

    def __len__(self) -> int:
        return len(self.tensors)

    def items(self):
        return self.tensors.items()

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.grad = None

    def copy(self) -> "ModelParams":
        return ModelParams({k: Tensor(v.values, requires_grad=v.requires_grad)
                            for k, v in self.tensors.items()})

    def as_arrays(self) -> dict[str, np.ndarray]:
        return {k: v.values.copy() for k, v in self.tensors.items()}


def param_shapes(config: ModelConfig) -> dict[str, tuple[int, int]]:
    h, c = config.hidden, config.feature_dim
    shapes = {"P": (c, h)}
    for layer in range(1, config.m + 1):
        shapes[f"agc{layer}.W"] = (h, h)
        if config.hop_attention == "additive":
            shapes[f"agc{layer}.Wa"] = (h, h)
            shapes[f"agc{layer}.wa"] = (h, 1)
        else:
            shapes[f"agc{layer}.hop_logits"] = (config.k, 1)
    shapes["dense.D"] = ((config.m + 1) * h, h)
    shapes["dense.bias"] = (1, h)
    shapes["pool.u1"] = (h, h)
    shapes["pool.u2"] = (config.r, h)
    shapes["cls.Z"] = (config.r * h, config.num_classes)
    shapes["cls.C"] = (1, config.num_classes)
    return shapes


def is_bias(name: str) -> bool:
    # zero-initialised entries; free hop logits start from uniform attention
    return name in ("dense.bias", "cls.C") or name.endswith(".hop_logits")


def init_bound(shape: tuple[int, int]) -> float:
    return float(np.sqrt(6.0 / (shape[0] + shape[1])))


def init_params(config: ModelConfig, seed: int) -> ModelParams:
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in param_shapes(config).items():
        if is_bias(name):
            values = np.zeros(shape)
        else:
            bound = init_bound(shape)
            values = rng.uniform(-bound, bound, size=shape)
        tensors[name] = Tensor(values, requires_grad=True)
    return ModelParams(tensors)


def _phi(config: ModelConfig):
    return ad.relu if config.nonlinearity == "relu" else ad.tanh


def agc_layer(a_norm: Tensor, h0: Tensor, params: ModelParams, config: ModelConfig,
              layer: int = 1, trace: dict | None = None) -> Tensor:
    """One attention graph convolution layer: k hops mixed by per-node attention."""
    if h0.cols != config.hidden:
        raise ad.DimensionError(f"layer input width {h0.cols} != hidden {config.hidden}")
    phi = _phi(config)
    w = params[f"agc{layer}.W"]
    hops = []
    h = h0
    for _ in range(config.k):
        h = phi(ad.matmul(a_norm, ad.matmul(h, w)))
        hops.append(h)

    if config.hop_attention == "additive":
        wa, va = params[f"agc{layer}.Wa"], params[f"agc{layer}.wa"]
        scores = [ad.matmul(ad.tanh(ad.matmul(hop, wa)), va) for hop in hops]
        logits = ad.concat_cols(scores)
    else:
        ones = ad.constant(np.ones((h0.rows, 1)))
        logits = ad.matmul(ones, ad.transpose(params[f"agc{layer}.hop_logits"]))
    alpha = ad.softmax_rows(logits)

    gamma = None
    for i, hop in enumerate(hops):
        term = ad.mul_col_broadcast(hop, ad.slice_cols(alpha, i, i + 1))
        gamma = term if gamma is None else ad.add(gamma, term)

    if trace is not None:
        for i, hop in enumerate(hops, start=1):
            trace[f"agc{layer}.H{i}"] = hop.values
        trace[f"agc{layer}.alpha"] = alpha.values
        trace[f"agc{layer}.gamma"] = gamma.values
    return gamma


def agc_module(a_norm: Tensor, x: Tensor, params: ModelParams, config: ModelConfig,
               trace: dict | None = None) -> Tensor:
    if x.cols != config.feature_dim:
        raise ad.DimensionError(f"feature width {x.cols} != feature_dim {config.feature_dim}")
    x_proj = ad.matmul(x, params["P"])
    gammas = [x_proj]
    layer_input = x_proj
    for layer in range(1, config.m + 1):
        gamma = agc_layer(a_norm, layer_input, params, config, layer, trace)
        gammas.append(gamma)
        layer_input = ad.add(gamma, x_proj)
    combined = ad.matmul(ad.concat_cols(gammas), params["dense.D"])
    g = _phi(config)(ad.add_row_broadcast(combined, params["dense.bias"]))
    if trace is not None:
        trace["X_proj"] = x_proj.values
        trace["G"] = g.values
    return g


def self_attention_pool(g: Tensor, params: ModelParams, config: ModelConfig | None = None,
                        trace: dict | None = None) -> Tensor:
    """Pool node rows of ``g`` into an r x h matrix through r attention distributions."""
    if g.rows == 0:
        raise ValueError("cannot pool an empty graph")
    s = ad.matmul(params["pool.u2"], ad.tanh(ad.matmul(params["pool.u1"], ad.transpose(g))))
    b = ad.softmax_rows(s)
    m = ad.matmul(b, g)
    if trace is not None:
        trace["S"] = s.values
        trace["B"] = b.values
        trace["M"] = m.values
    return m


def classify(m: Tensor, params: ModelParams, trace: dict | None = None) -> Tensor:
    flat = ad.reshape(m, 1, m.rows * m.cols)
    logits = ad.add_row_broadcast(ad.matmul(flat, params["cls.Z"]), params["cls.C"])
    probs = ad.softmax_rows(logits)
    if trace is not None:
        trace["logits"] = logits.values
        trace["probs"] = probs.values
    return probs


def model_forward(graph: Graph, params: ModelParams, config: ModelConfig,
                  trace: dict | None = None) -> Tensor:
    """Class probabilities (1 x num_classes) for one graph."""
    if graph.features.shape[1] != config.feature_dim:
        raise ad.DimensionError(
            f"graph has {graph.features.shape[1]} features, model expects {config.feature_dim}")
    a_norm = ad.constant(graph.norm_adjacency)
    x = ad.constant(graph.features)
    g = agc_module(a_norm, x, params, config, trace)
    m = self_attention_pool(g, params, config, trace)
    return classify(m, params, trace)


def predict(graph: Graph, params: ModelParams, config: ModelConfig) -> int:
    # np.argmax returns the first maximum: ties go to the lower class index
    return int(np.argmax(model_forward(graph, params, config).values[0]))


def save_checkpoint(path: Path | str, params: ModelParams, config: ModelConfig, seed: int,
                    extra: dict | None = None) -> None:
    meta = {"config": config.to_dict(), "seed": seed,
            "shapes": {k: list(v.shape) for k, v in params.items()},
            "extra": extra or {}}
    arrays = {f"param/{k}": v.values for k, v in params.items()}
    with open(path, "wb") as fh:
        np.savez(fh, __meta__=np.array(json.dumps(meta, sort_keys=True)), **arrays)


def load_checkpoint(path: Path | str) -> tuple[ModelParams, ModelConfig, dict]:
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["__meta__"]))
        tensors = {}
        for name, shape in meta["shapes"].items():
            values = data[f"param/{name}"]
            if list(values.shape) != shape:
                raise ValueError(f"checkpoint shape mismatch for {name}")
            tensors[name] = Tensor(values, requires_grad=True)
    config = ModelConfig(**meta["config"])
    expected = param_shapes(config)
    if {k: tuple(v) for k, v in meta["shapes"].items()} != expected:
        raise ValueError("checkpoint parameters do not match its config")
    return ModelParams(tensors), config, meta
