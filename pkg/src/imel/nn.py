"""Small fully connected networks with hand-written reverse mode.

Parameters live in one flat float64 vector. Each layer is described by
``(rows, cols, has_bias)``: a ``rows x cols`` weight block stored row-major,
followed by ``rows`` bias entries when present. Inputs are batched row-wise,
so a layer computes ``x @ W.T + b``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import ShapeError, TrainingDivergence

ACTIVATIONS = ("tanh", "linear", "relu", "softplus")


def softplus(x):
    return np.logaddexp(0.0, x)


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _activate(name, z):
    if name == "tanh":
        return np.tanh(z)
    if name == "linear":
        return z
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "softplus":
        return softplus(z)
    raise ValueError(f"unknown activation {name!r}")


def _activation_grad(name, z, y):
    # derivative of the activation at pre-activation z (with output y)
    if name == "tanh":
        return 1.0 - y * y
    if name == "linear":
        return None
    if name == "relu":
        return (z > 0.0).astype(np.float64)
    return sigmoid(z)


@dataclass(frozen=True, eq=False)
class NetParams:
    values: np.ndarray
    shapes: tuple[tuple[int, int, bool], ...]
    activations: tuple[str, ...]

    def __post_init__(self):
        values = np.ascontiguousarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "shapes", tuple((int(r), int(c), bool(b)) for r, c, b in self.shapes))
        object.__setattr__(self, "activations", tuple(self.activations))
        if len(self.shapes) != len(self.activations):
            raise ShapeError("one activation per layer is required")
        for act in self.activations:
            if act not in ACTIVATIONS:
                raise ValueError(f"unknown activation {act!r}")
        for (r, _, _), (_, c, _) in zip(self.shapes[:-1], self.shapes[1:]):
            if r != c:
                raise ShapeError(f"layer output {r} feeds layer input {c}")
        if values.ndim != 1 or values.size != param_count(self.shapes):
            raise ShapeError(
                f"expected {param_count(self.shapes)} values, got {values.size}"
            )

    @property
    def in_dim(self) -> int:
        return self.shapes[0][1]

    @property
    def out_dim(self) -> int:
        return self.shapes[-1][0]

    @property
    def size(self) -> int:
        return self.values.size

    def layers(self, values=None):
        """(W, b) views into ``values`` (defaults to own values); b may be None."""
        values = self.values if values is None else values
        out = []
        offset = 0
        for rows, cols, has_bias in self.shapes:
            w = values[offset:offset + rows * cols].reshape(rows, cols)
            offset += rows * cols
            b = None
            if has_bias:
                b = values[offset:offset + rows]
                offset += rows
            out.append((w, b))
        return out

    def replace(self, values) -> "NetParams":
        return NetParams(values, self.shapes, self.activations)


def param_count(shapes) -> int:
    return sum(r * c + (r if b else 0) for r, c, b in shapes)


def mlp_layout(sizes: Sequence[int], hidden_activation="tanh", output_activation="linear"):
    """Shapes and activations for a dense chain ``sizes[0] -> ... -> sizes[-1]``."""
    if len(sizes) < 2:
        raise ShapeError("need at least input and output sizes")
    shapes = [(sizes[i + 1], sizes[i], True) for i in range(len(sizes) - 1)]
    acts = [hidden_activation] * (len(shapes) - 1) + [output_activation]
    return shapes, acts


def init_params(shapes, activations, seed) -> NetParams:
    """Fan-in normalized Gaussian weights (variance 1/fan_in), zero biases."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    values = np.zeros(param_count(shapes))
    offset = 0
    for rows, cols, has_bias in shapes:
        n = rows * cols
        values[offset:offset + n] = rng.standard_normal(n) / np.sqrt(cols)
        offset += n + (rows if has_bias else 0)
    return NetParams(values, shapes, activations)


def mlp(sizes, seed, hidden_activation="tanh", output_activation="linear") -> NetParams:
    shapes, acts = mlp_layout(sizes, hidden_activation, output_activation)
    return init_params(shapes, acts, seed)


def _as_batch(params: NetParams, x):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    x2 = x[None, :] if single else x
    if x2.ndim != 2 or x2.shape[1] != params.in_dim:
        raise ShapeError(f"input of shape {x.shape} does not match in_dim={params.in_dim}")
    return x2, single


def forward_with_cache(params: NetParams, x):
    x2, single = _as_batch(params, x)
    cache = []
    h = x2
    for (w, b), act in zip(params.layers(), params.activations):
        z = h @ w.T
        if b is not None:
            z = z + b
        y = _activate(act, z)
        cache.append((h, z, y))
        h = y
    return (h[0] if single else h), cache


def forward(params: NetParams, x):
    return forward_with_cache(params, x)[0]


def backward(params: NetParams, x, upstream, cache=None):
    """Gradients of ``sum(upstream * forward(x))``.

    Returns ``(param_gradient, input_gradient)``; the former has the flat
    NetParams layout, the latter the shape of ``x``.
    """
    x2, single = _as_batch(params, x)
    g = np.asarray(upstream, dtype=np.float64)
    g = g[None, :] if g.ndim == 1 else g
    if g.shape != (x2.shape[0], params.out_dim):
        raise ShapeError(f"upstream gradient of shape {np.shape(upstream)} does not match output")
    if cache is None:
        _, cache = forward_with_cache(params, x2)
    grad = np.zeros(params.size)
    glayers = params.layers(grad)
    for (w, _), (gw, gb), act, (h, z, y) in zip(
        reversed(params.layers()), reversed(glayers), reversed(params.activations), reversed(cache)
    ):
        d = _activation_grad(act, z, y)
        if d is not None:
            g = g * d
        gw += g.T @ h
        if gb is not None:
            gb += g.sum(axis=0)
        g = g @ w
    return grad, (g[0] if single else g)


@dataclass
class OptimizerState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    learning_rate: float = 1e-3
    method: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def create(cls, size, learning_rate=1e-3, method="adam", **kw) -> "OptimizerState":
        if method not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {method!r}")
        return cls(np.zeros(size), np.zeros(size), 0, float(learning_rate), method, **kw)


def optimizer_step(params, gradient, state: OptimizerState):
    """One SGD or Adam update.

    ``params`` may be a NetParams or a bare flat vector; the same kind is
    returned together with a new OptimizerState.
    """
    values = params.values if isinstance(params, NetParams) else np.asarray(params, dtype=np.float64)
    grad = np.asarray(gradient, dtype=np.float64)
    if grad.shape != values.shape or state.first_moment.shape != values.shape:
        raise ShapeError("parameter, gradient and optimizer state lengths differ")
    if not np.all(np.isfinite(grad)):
        raise TrainingDivergence("non-finite gradient")
    t = state.step_count + 1
    lr = state.learning_rate
    if state.method == "sgd":
        m, v = state.first_moment, state.second_moment
        new = values - lr * grad
    else:
        m = state.beta1 * state.first_moment + (1.0 - state.beta1) * grad
        v = state.beta2 * state.second_moment + (1.0 - state.beta2) * grad * grad
        m_hat = m / (1.0 - state.beta1 ** t)
        v_hat = v / (1.0 - state.beta2 ** t)
        new = values - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    if not np.all(np.isfinite(new)):
        raise TrainingDivergence("parameters became non-finite")
    new_state = OptimizerState(m, v, t, lr, state.method, state.beta1, state.beta2, state.eps)
    if isinstance(params, NetParams):
        return params.replace(new), new_state
    return new, new_state


# -- snapshot format -------------------------------------------------------

SNAPSHOT_MAGIC = b"IMELSNAP 1\n"


def save_snapshot(path, nets: Mapping[str, NetParams], arrays: Mapping[str, np.ndarray] | None = None,
                  meta: dict | None = None) -> None:
    """Write named networks and arrays to one portable file.

    Layout: the magic line ``IMELSNAP 1``, one line of UTF-8 JSON header, then
    all payload reals as little-endian float64. Header offsets and counts are
    in reals from the start of the payload.
    """
    header = {"networks": [], "arrays": [], "meta": meta or {}}
    chunks = []
    offset = 0
    for name, net in nets.items():
        header["networks"].append({
            "name": name,
            "shapes": [list(s) for s in net.shapes],
            "activations": list(net.activations),
            "offset": offset,
            "count": net.size,
        })
        chunks.append(net.values)
        offset += net.size
    for name, arr in (arrays or {}).items():
        arr = np.asarray(arr, dtype=np.float64)
        header["arrays"].append({"name": name, "shape": list(arr.shape), "offset": offset, "count": arr.size})
        chunks.append(arr.ravel())
        offset += arr.size
    payload = np.concatenate(chunks).astype("<f8") if chunks else np.zeros(0, "<f8")
    with open(path, "wb") as fh:
        fh.write(SNAPSHOT_MAGIC)
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        fh.write(payload.tobytes())


def load_snapshot(path):
    """Inverse of :func:`save_snapshot`: ``(nets, arrays, meta)``."""
    data = Path(path).read_bytes()
    if not data.startswith(SNAPSHOT_MAGIC):
        raise ValueError(f"{path}: not an IMELSNAP v1 file")
    rest = data[len(SNAPSHOT_MAGIC):]
    nl = rest.index(b"\n")
    header = json.loads(rest[:nl])
    payload = np.frombuffer(rest[nl + 1:], dtype="<f8").astype(np.float64)
    nets = {}
    for entry in header["networks"]:
        vals = payload[entry["offset"]:entry["offset"] + entry["count"]].copy()
        nets[entry["name"]] = NetParams(vals, [tuple(s) for s in entry["shapes"]], entry["activations"])
    arrays = {}
    for entry in header["arrays"]:
        vals = payload[entry["offset"]:entry["offset"] + entry["count"]]
        arrays[entry["name"]] = vals.reshape(entry["shape"]).copy()
    return nets, arrays, header["meta"]
