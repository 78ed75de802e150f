"""Small fully connected networks with hand-written backpropagation and Adam.

Arrays follow the row-batch convention: an input batch has shape (B, d_in)
and layer k computes ``h @ W_k.T + b_k`` with ``W_k`` of shape
(d_out, d_in).  A 1-D input is treated as a batch of one and the output is
returned 1-D again.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ContractError, DivergenceError

HIDDEN_ACTIVATIONS = ("relu",)
OUTPUT_ACTIVATIONS = ("identity", "sigmoid")
CHECKPOINT_VERSION = 1


@dataclass(eq=False)
class Mlp:
    layer_dims: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    hidden_activation: str = "relu"
    output_activation: str = "identity"

    def __post_init__(self):
        self.layer_dims = tuple(int(d) for d in self.layer_dims)
        if len(self.layer_dims) < 2 or min(self.layer_dims) < 1:
            raise ContractError(f"invalid layer dims {self.layer_dims}")
        if self.hidden_activation not in HIDDEN_ACTIVATIONS:
            raise ContractError(f"unknown hidden activation {self.hidden_activation!r}")
        if self.output_activation not in OUTPUT_ACTIVATIONS:
            raise ContractError(f"unknown output activation {self.output_activation!r}")
        if len(self.weights) != self.n_layers or len(self.biases) != self.n_layers:
            raise ContractError("parameter count does not match layer dims")
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            want = (self.layer_dims[k + 1], self.layer_dims[k])
            if W.shape != want or b.shape != (want[0],):
                raise ContractError(f"layer {k}: W {W.shape}, b {b.shape}, expected {want}")

    @property
    def n_layers(self) -> int:
        return len(self.layer_dims) - 1

    @property
    def in_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def out_dim(self) -> int:
        return self.layer_dims[-1]

    def params(self) -> list[np.ndarray]:
        return [*self.weights, *self.biases]

    def copy(self) -> "Mlp":
        return replace(self, weights=[W.copy() for W in self.weights],
                       biases=[b.copy() for b in self.biases])

    def all_finite(self) -> bool:
        return all(np.isfinite(p).all() for p in self.params())

    def __call__(self, x):
        return forward(self, x)[0]


@dataclass
class ForwardTrace:
    mlp: Mlp
    inputs: np.ndarray
    pre: list[np.ndarray]
    post: list[np.ndarray]


@dataclass
class Gradients:
    """Parameter gradients of one network plus the gradient w.r.t. its input."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    inputs: np.ndarray | None = None

    def params(self) -> list[np.ndarray]:
        return [*self.weights, *self.biases]

    def scaled(self, factor: float) -> "Gradients":
        return Gradients([w * factor for w in self.weights],
                         [b * factor for b in self.biases],
                         None if self.inputs is None else self.inputs * factor)

    def __add__(self, other: "Gradients") -> "Gradients":
        return Gradients([a + b for a, b in zip(self.weights, other.weights)],
                         [a + b for a, b in zip(self.biases, other.biases)])

    @classmethod
    def zeros_like(cls, mlp: Mlp) -> "Gradients":
        return cls([np.zeros_like(W) for W in mlp.weights],
                   [np.zeros_like(b) for b in mlp.biases])


def xavier_init(layer_dims, seed, hidden_activation="relu",
                output_activation="identity") -> Mlp:
    """Glorot-uniform weights, zero biases; deterministic in ``seed``."""
    dims = tuple(int(d) for d in layer_dims)
    if len(dims) < 2 or min(dims) < 1:
        raise ContractError(f"invalid layer dims {dims}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return Mlp(dims, weights, biases, hidden_activation, output_activation)


def _activate(kind: str, a: np.ndarray) -> np.ndarray:
    if kind == "relu":
        return np.maximum(a, 0.0)
    if kind == "sigmoid":
        return 1.0 / (1.0 + np.exp(-a))
    return a


def forward(mlp: Mlp, x) -> tuple[np.ndarray, ForwardTrace]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.ndim != 2 or X.shape[1] != mlp.in_dim:
        raise ContractError(f"expected input width {mlp.in_dim}, got shape {x.shape}")
    pre, post = [], []
    h = X
    last = mlp.n_layers - 1
    for k, (W, b) in enumerate(zip(mlp.weights, mlp.biases)):
        a = h @ W.T + b
        h = _activate(mlp.output_activation if k == last else mlp.hidden_activation, a)
        pre.append(a)
        post.append(h)
    out = h[0] if single else h
    return out, ForwardTrace(mlp, X, pre, post)


def backward(mlp: Mlp, trace: ForwardTrace, grad_output) -> Gradients:
    """Vector-Jacobian product of ``forward``.

    Returns the gradient of ``sum(grad_output * output)`` with respect to
    every weight and bias (summed over the batch) and to the inputs.
    """
    if trace.mlp is not mlp:
        raise ContractError("trace was produced by a different network")
    g = np.asarray(grad_output, dtype=np.float64)
    if g.ndim == 1:
        g = g[None, :]
    if g.shape != trace.post[-1].shape:
        raise ContractError(f"grad_output shape {g.shape} != output {trace.post[-1].shape}")
    gW: list[np.ndarray] = [None] * mlp.n_layers  # type: ignore[list-item]
    gb: list[np.ndarray] = [None] * mlp.n_layers  # type: ignore[list-item]
    last = mlp.n_layers - 1
    for k in range(last, -1, -1):
        kind = mlp.output_activation if k == last else mlp.hidden_activation
        if kind == "relu":
            g = g * (trace.pre[k] > 0.0)
        elif kind == "sigmoid":
            s = trace.post[k]
            g = g * s * (1.0 - s)
        h_in = trace.post[k - 1] if k > 0 else trace.inputs
        gW[k] = g.T @ h_in
        gb[k] = g.sum(axis=0)
        g = g @ mlp.weights[k]
    return Gradients(gW, gb, g)


# --------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-5

    @classmethod
    def for_mlp(cls, mlp: Mlp, lr=1e-4, weight_decay=1e-5, **kw) -> "AdamState":
        return cls([np.zeros_like(p) for p in mlp.params()],
                   [np.zeros_like(p) for p in mlp.params()],
                   lr=lr, weight_decay=weight_decay, **kw)


def adam_step(mlp: Mlp, grads: Gradients, state: AdamState) -> tuple[Mlp, AdamState]:
    """One bias-corrected Adam update with decoupled weight decay on weights.

    Returns new objects; the inputs are left untouched.
    """
    g_list = grads.params()
    if len(g_list) != len(state.m):
        raise ContractError("gradient list does not match optimizer state")
    for g, p in zip(g_list, mlp.params()):
        if g.shape != p.shape:
            raise ContractError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        if not np.isfinite(g).all():
            raise DivergenceError("non-finite gradient passed to adam_step")
    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1 ** t
    corr2 = 1.0 - b2 ** t
    n_w = mlp.n_layers
    new_m, new_v, new_p = [], [], []
    for i, (p, g, m, v) in enumerate(zip(mlp.params(), g_list, state.m, state.v)):
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        update = (m / corr1) / (np.sqrt(v / corr2) + state.eps)
        if i < n_w and state.weight_decay:
            update = update + state.weight_decay * p
        new_p.append(p - state.lr * update)
        new_m.append(m)
        new_v.append(v)
    out = replace(mlp, weights=new_p[:n_w], biases=new_p[n_w:])
    if not out.all_finite():
        raise DivergenceError("parameters became non-finite")
    return out, replace(state, m=new_m, v=new_v, t=t)


# --------------------------------------------------------------------------
# Checkpoints


def _pack(prefix: str, mlp: Mlp) -> dict:
    arrays = {
        f"{prefix}.layer_dims": np.asarray(mlp.layer_dims, dtype=np.int64),
        f"{prefix}.activations": np.asarray([mlp.hidden_activation, mlp.output_activation]),
    }
    for k, (W, b) in enumerate(zip(mlp.weights, mlp.biases)):
        arrays[f"{prefix}.W{k}"] = W
        arrays[f"{prefix}.b{k}"] = b
    return arrays


def save_checkpoint(path, **nets: Mlp) -> None:
    """Write named networks to an ``.npz`` file (exact float64 round trip)."""
    arrays = {"version": np.asarray(CHECKPOINT_VERSION),
              "names": np.asarray(sorted(nets))}
    for name, mlp in nets.items():
        arrays.update(_pack(name, mlp))
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path) -> dict[str, Mlp]:
    with np.load(path, allow_pickle=False) as data:
        version = int(data["version"])
        if version != CHECKPOINT_VERSION:
            raise ContractError(f"unsupported checkpoint version {version}")
        nets = {}
        for name in data["names"].tolist():
            dims = tuple(int(d) for d in data[f"{name}.layer_dims"])
            hidden, output = data[f"{name}.activations"].tolist()
            n = len(dims) - 1
            nets[name] = Mlp(dims,
                             [data[f"{name}.W{k}"].copy() for k in range(n)],
                             [data[f"{name}.b{k}"].copy() for k in range(n)],
                             hidden, output)
    return nets
