"""Minimal fully connected network with exact reverse-mode gradients.

The networks here produce distribution parameters for policies and the
scalar output of a value function. Parameters live in a single flat
float64 vector so optimizers and checkpointing stay trivial; the layout
is fixed by the spec (per layer: weight matrix row-major, then bias).

Output heads split the final linear layer into named groups, each with
its own elementwise transform:

* ``identity`` leaves the pre-activation untouched.
* ``softplus_plus_one`` maps z to ln(1 + e^z) + 1, keeping outputs > 1
  (used for Beta shape parameters so densities stay unimodal).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .stochastics import Rng

__all__ = [
    "Head",
    "MlpSpec",
    "param_count",
    "init_params",
    "unflatten",
    "flatten",
    "mlp_forward",
    "mlp_forward_heads",
    "mlp_backward",
    "write_checkpoint",
    "read_checkpoint",
]

_TRANSFORMS = ("identity", "softplus_plus_one")


@dataclass(frozen=True)
class Head:
    name: str
    size: int
    transform: str = "identity"

    def __post_init__(self):
        if self.size < 1:
            raise ValueError(f"head {self.name!r} must have positive size")
        if self.transform not in _TRANSFORMS:
            raise ValueError(f"unknown head transform {self.transform!r}")


@dataclass(frozen=True)
class MlpSpec:
    """Architecture description: layer widths plus named output heads."""

    layer_sizes: tuple
    heads: tuple
    hidden_activation: str = "tanh"

    def __post_init__(self):
        object.__setattr__(self, "layer_sizes", tuple(int(n) for n in self.layer_sizes))
        object.__setattr__(self, "heads", tuple(self.heads))
        if len(self.layer_sizes) < 2:
            raise ValueError("need at least an input and an output layer")
        if any(n < 1 for n in self.layer_sizes):
            raise ValueError("layer sizes must be positive")
        if self.hidden_activation != "tanh":
            raise ValueError(f"unsupported hidden activation {self.hidden_activation!r}")
        if sum(h.size for h in self.heads) != self.layer_sizes[-1]:
            raise ValueError("head sizes must sum to the final layer size")

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    def head_slices(self) -> dict:
        out = {}
        offset = 0
        for h in self.heads:
            out[h.name] = slice(offset, offset + h.size)
            offset += h.size
        return out


def _layer_shapes(spec: MlpSpec):
    sizes = spec.layer_sizes
    return [((sizes[i + 1], sizes[i]), (sizes[i + 1],)) for i in range(len(sizes) - 1)]


def param_count(spec: MlpSpec) -> int:
    return sum((fi + 1) * fo for fi, fo in zip(spec.layer_sizes[:-1], spec.layer_sizes[1:]))


def init_params(spec: MlpSpec, rng: Rng) -> np.ndarray:
    """Glorot-uniform weights, zero biases."""
    chunks = []
    for (w_shape, b_shape) in _layer_shapes(spec):
        fan_out, fan_in = w_shape
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        chunks.append(rng.uniform(-bound, bound, size=w_shape).ravel())
        chunks.append(np.zeros(b_shape))
    return np.concatenate(chunks)


def unflatten(spec: MlpSpec, params: np.ndarray):
    """Split a flat parameter vector into per-layer (W, b) views."""
    params = np.asarray(params, dtype=float)
    if params.shape != (param_count(spec),):
        raise ValueError(f"expected {param_count(spec)} parameters, got shape {params.shape}")
    layers = []
    offset = 0
    for (w_shape, b_shape) in _layer_shapes(spec):
        w_n = w_shape[0] * w_shape[1]
        w = params[offset : offset + w_n].reshape(w_shape)
        offset += w_n
        b = params[offset : offset + b_shape[0]]
        offset += b_shape[0]
        layers.append((w, b))
    return layers


def flatten(layers) -> np.ndarray:
    return np.concatenate([np.concatenate([w.ravel(), b]) for w, b in layers])


def _softplus(z):
    return np.logaddexp(0.0, z)


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _forward_pass(spec: MlpSpec, params: np.ndarray, x: np.ndarray):
    """Returns (head-transformed output, cache) for a single or batched input."""
    x = np.asarray(x, dtype=float)
    squeeze = x.ndim == 1
    a = x[None, :] if squeeze else x
    if a.shape[1] != spec.input_dim:
        raise ValueError(f"input dim {a.shape[1]} != spec input dim {spec.input_dim}")
    layers = unflatten(spec, params)
    activations = [a]
    for w, b in layers[:-1]:
        a = np.tanh(a @ w.T + b)
        activations.append(a)
    w, b = layers[-1]
    z = a @ w.T + b
    out = np.empty_like(z)
    for h, s in zip(spec.heads, spec.head_slices().values()):
        if h.transform == "identity":
            out[:, s] = z[:, s]
        else:
            out[:, s] = _softplus(z[:, s]) + 1.0
    cache = (layers, activations, z, squeeze)
    return (out[0] if squeeze else out), cache


def mlp_forward(spec: MlpSpec, params: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Forward pass; accepts a single input vector or a (batch, dim) array."""
    out, _ = _forward_pass(spec, params, x)
    return out


def mlp_forward_heads(spec: MlpSpec, params: np.ndarray, x: np.ndarray) -> dict:
    out = mlp_forward(spec, params, x)
    sls = spec.head_slices()
    if out.ndim == 1:
        return {name: out[s] for name, s in sls.items()}
    return {name: out[:, s] for name, s in sls.items()}


def mlp_backward(spec: MlpSpec, params: np.ndarray, x: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    """Gradient of sum_b upstream[b] . output[b] with respect to the flat parameters.

    `upstream` has the same shape as the forward output (head-transformed).
    """
    _, (layers, activations, z, squeeze) = _forward_pass(spec, params, x)
    upstream = np.asarray(upstream, dtype=float)
    up = upstream[None, :] if squeeze else upstream
    if up.shape != z.shape:
        raise ValueError(f"upstream shape {upstream.shape} does not match output shape")

    dz = np.empty_like(z)
    for h, s in zip(spec.heads, spec.head_slices().values()):
        if h.transform == "identity":
            dz[:, s] = up[:, s]
        else:
            dz[:, s] = up[:, s] * _sigmoid(z[:, s])

    grads = [None] * len(layers)
    delta = dz
    for i in range(len(layers) - 1, -1, -1):
        w, _ = layers[i]
        a_prev = activations[i]
        g_w = delta.T @ a_prev
        g_b = delta.sum(axis=0)
        grads[i] = (g_w, g_b)
        if i > 0:
            delta = (delta @ w) * (1.0 - activations[i] ** 2)
    return flatten(grads)


# ---------------------------------------------------------------------------
# checkpointing: flat little-endian float64 array + JSON sidecar
# ---------------------------------------------------------------------------


def write_checkpoint(path, spec: MlpSpec, params: np.ndarray, extra: dict | None = None) -> None:
    """Write params to `path`.bin and a JSON sidecar to `path`.json."""
    base = Path(path)
    np.asarray(params, dtype="<f8").tofile(base.with_suffix(".bin"))
    sidecar = {
        "layer_sizes": list(spec.layer_sizes),
        "hidden_activation": spec.hidden_activation,
        "heads": [{"name": h.name, "size": h.size, "transform": h.transform} for h in spec.heads],
        "param_count": int(param_count(spec)),
        "extra": extra or {},
    }
    base.with_suffix(".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")


def read_checkpoint(path):
    """Read back (spec, params, extra) written by :func:`write_checkpoint`."""
    base = Path(path)
    sidecar = json.loads(base.with_suffix(".json").read_text())
    spec = MlpSpec(
        layer_sizes=tuple(sidecar["layer_sizes"]),
        heads=tuple(Head(h["name"], h["size"], h["transform"]) for h in sidecar["heads"]),
        hidden_activation=sidecar["hidden_activation"],
    )
    params = np.fromfile(base.with_suffix(".bin"), dtype="<f8")
    if params.shape[0] != sidecar["param_count"]:
        raise ValueError("checkpoint parameter count does not match sidecar")
    return spec, params, sidecar["extra"]
