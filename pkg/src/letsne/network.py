"""Shallow fully-connected encoder with batch normalisation.

Hidden layers compute ``relu(bn(x @ W + b))``; the output layer is a plain
affine map. Trainable arrays are exposed in a fixed order through
:meth:`MlpModel.trainables` and gradients use the same order, so optimiser
code can simply ``zip`` them.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

BN_MOMENTUM = 0.9
BN_EPS = 1e-5
_MAGIC = b"LETSNE-MLP1\n"


class NetworkError(RuntimeError):
    pass


class TrainingError(RuntimeError):
    pass


@dataclass
class BatchNorm:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray


@dataclass
class Layer:
    weight: np.ndarray  # (fan_in, fan_out)
    bias: np.ndarray
    activation: str = "identity"
    bn: BatchNorm | None = None

    @property
    def fan_in(self):
        return self.weight.shape[0]

    @property
    def fan_out(self):
        return self.weight.shape[1]


@dataclass
class MlpModel:
    layers: list[Layer]
    training: bool = field(default=True)

    @property
    def input_dim(self):
        return self.layers[0].fan_in

    @property
    def output_dim(self):
        return self.layers[-1].fan_out

    def trainables(self):
        out = []
        for layer in self.layers:
            out += [layer.weight, layer.bias]
            if layer.bn is not None:
                out += [layer.bn.gamma, layer.bn.beta]
        return out

    def n_trainable(self):
        return sum(a.size for a in self.trainables())

    def describe(self):
        return {
            "layers": [
                {
                    "fan_in": l.fan_in,
                    "fan_out": l.fan_out,
                    "activation": l.activation,
                    "batch_norm": l.bn is not None,
                }
                for l in self.layers
            ]
        }

    def copy(self):
        return copy.deepcopy(self)


def parameter_count(input_dim, hidden_dims, output_dim):
    """Closed-form trainable count: affine weights and biases plus BN scale/shift."""
    dims = [input_dim, *hidden_dims, output_dim]
    affine = sum(a * b + b for a, b in zip(dims[:-1], dims[1:]))
    return affine + 2 * sum(hidden_dims)


def init_model(input_dim, hidden_dims=(256, 64), output_dim=2, seed=0):
    """He-uniform weights, zero biases, identity batch norm."""
    dims = [int(input_dim), *[int(h) for h in hidden_dims], int(output_dim)]
    if min(dims) < 1:
        raise NetworkError(f"layer sizes must be >= 1, got {dims}")
    rng = np.random.default_rng(seed)
    layers = []
    for i, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
        limit = np.sqrt(6.0 / fan_in)
        w = rng.uniform(-limit, limit, size=(fan_in, fan_out))
        hidden = i < len(dims) - 2
        bn = None
        if hidden:
            bn = BatchNorm(
                gamma=np.ones(fan_out),
                beta=np.zeros(fan_out),
                running_mean=np.zeros(fan_out),
                running_var=np.ones(fan_out),
            )
        layers.append(
            Layer(w, np.zeros(fan_out), activation="relu" if hidden else "identity", bn=bn)
        )
    return MlpModel(layers)


def forward(model, x, mode="train", update_stats=True):
    """Run the encoder. Returns ``(Y, cache)``.

    In ``"train"`` mode batch statistics normalise hidden units and the
    running averages are updated (unless ``update_stats`` is false). In
    ``"inference"`` mode the running averages are used and nothing is mutated.
    """
    if mode not in ("train", "inference"):
        raise NetworkError(f"unknown mode {mode!r}")
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise NetworkError("forward needs a non-empty 2-D batch")
    if x.shape[1] != model.input_dim:
        raise NetworkError(f"expected {model.input_dim} features, got {x.shape[1]}")
    train = mode == "train"
    if train and x.shape[0] < 2:
        raise NetworkError("batch norm in train mode needs a batch of at least 2")

    cache = {"x": x, "layers": [], "mode": mode}
    h = x
    for layer in model.layers:
        entry = {"input": h}
        z = h @ layer.weight + layer.bias
        if layer.bn is not None:
            bn = layer.bn
            if train:
                mu = z.mean(axis=0)
                var = z.var(axis=0)
                if update_stats:
                    bn.running_mean *= BN_MOMENTUM
                    bn.running_mean += (1 - BN_MOMENTUM) * mu
                    bn.running_var *= BN_MOMENTUM
                    bn.running_var += (1 - BN_MOMENTUM) * var
            else:
                mu, var = bn.running_mean, bn.running_var
            inv_std = 1.0 / np.sqrt(var + BN_EPS)
            zhat = (z - mu) * inv_std
            entry.update(zhat=zhat, inv_std=inv_std)
            z = bn.gamma * zhat + bn.beta
        if layer.activation == "relu":
            entry["active"] = z > 0
            z = np.where(entry["active"], z, 0.0)
        cache["layers"].append(entry)
        h = z
    return h, cache


def backward(model, cache, grad_y):
    """Gradients of a scalar loss w.r.t. :meth:`MlpModel.trainables`.

    ``cache`` must come from a train-mode :func:`forward` on the same batch;
    batch-norm gradients include the dependence of the batch mean and
    variance on every sample.
    """
    if cache.get("mode") != "train":
        raise NetworkError("backward needs the cache of a train-mode forward pass")
    g = np.asarray(grad_y, dtype=np.float64)
    m = cache["x"].shape[0]
    if g.shape != (m, model.output_dim) or len(cache["layers"]) != len(model.layers):
        raise NetworkError("cache or upstream gradient does not match this model")

    grads = []
    for layer, entry in zip(reversed(model.layers), reversed(cache["layers"])):
        layer_grads = []
        if layer.activation == "relu":
            g = g * entry["active"]
        if layer.bn is not None:
            zhat, inv_std = entry["zhat"], entry["inv_std"]
            dgamma = np.sum(g * zhat, axis=0)
            dbeta = g.sum(axis=0)
            gz = g * layer.bn.gamma
            g = inv_std / m * (m * gz - gz.sum(axis=0) - zhat * np.sum(gz * zhat, axis=0))
            layer_grads = [dgamma, dbeta]
        dw = entry["input"].T @ g
        db = g.sum(axis=0)
        grads = [dw, db, *layer_grads] + grads
        g = g @ layer.weight.T
    return grads


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(model, grads, state):
    """One bias-corrected Adam update applied in place; returns ``model``."""
    params = model.trainables()
    if len(grads) != len(params):
        raise NetworkError("gradient list does not match model trainables")
    for i, g in enumerate(grads):
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient in trainable #{i} (shape {g.shape})")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return model


def _blocks(model):
    for layer in model.layers:
        yield layer.weight
        yield layer.bias
        if layer.bn is not None:
            yield layer.bn.gamma
            yield layer.bn.beta
            yield layer.bn.running_mean
            yield layer.bn.running_var


def save_model(model, path):
    """JSON architecture line followed by little-endian float64 blocks."""
    with Path(path).open("wb") as fh:
        fh.write(_MAGIC)
        fh.write(json.dumps(model.describe(), sort_keys=True).encode() + b"\n")
        for block in _blocks(model):
            fh.write(np.ascontiguousarray(block, dtype="<f8").tobytes())


def load_model(path):
    blob = Path(path).read_bytes()
    if not blob.startswith(_MAGIC):
        raise NetworkError(f"{path}: not a model file")
    nl = blob.index(b"\n", len(_MAGIC))
    desc = json.loads(blob[len(_MAGIC):nl])
    offset = nl + 1
    flat = np.frombuffer(blob, dtype="<f8", offset=offset)
    pos = 0

    def take(*shape):
        nonlocal pos
        size = int(np.prod(shape))
        if pos + size > flat.size:
            raise NetworkError(f"{path}: truncated parameter block")
        arr = flat[pos:pos + size].reshape(shape).astype(np.float64)
        pos += size
        return arr

    layers = []
    for spec in desc["layers"]:
        fi, fo = spec["fan_in"], spec["fan_out"]
        w, b = take(fi, fo), take(fo)
        bn = None
        if spec["batch_norm"]:
            bn = BatchNorm(take(fo), take(fo), take(fo), take(fo))
        layers.append(Layer(w, b, activation=spec["activation"], bn=bn))
    if pos != flat.size:
        raise NetworkError(f"{path}: {flat.size - pos} trailing parameters")
    return MlpModel(layers)


def project(model, x, batch_size=4096):
    """Inference-mode embedding of every row of ``x``."""
    x = np.asarray(x, dtype=np.float64)
    out = [forward(model, x[s:s + batch_size], mode="inference")[0]
           for s in range(0, x.shape[0], batch_size)]
    return np.concatenate(out, axis=0)
