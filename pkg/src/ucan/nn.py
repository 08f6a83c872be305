"""Dense multilayer perceptrons with hand-written backpropagation.

Matrices are plain ``float64`` numpy arrays.  A model is a chain of
:class:`Layer` objects; :func:`mlp_forward` optionally records activations on a
:class:`GradientTape`, which :func:`mlp_backward` then fills with parameter
gradients.  :class:`Optimizer` implements SGD and Adam.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DomainError, NumericError, ParseError, ShapeError, StateError

ACTIVATIONS = ("leaky_relu", "sigmoid", "identity")


@dataclass
class Layer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str = "identity"
    slope: float = 0.2  # only used by leaky_relu

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.activation not in ACTIVATIONS:
            raise DomainError(f"unknown activation {self.activation!r}")
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise ShapeError(
                f"bias shape {self.bias.shape} does not match weight {self.weight.shape}"
            )

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]


@dataclass
class MlpModel:
    layers: list[Layer]
    input_dropout: float = 0.0

    def __post_init__(self):
        if not self.layers:
            raise ShapeError("a model needs at least one layer")
        for i, (a, b) in enumerate(zip(self.layers, self.layers[1:])):
            if a.out_dim != b.in_dim:
                raise ShapeError(f"layer {i} outputs {a.out_dim} but layer {i + 1} expects {b.in_dim}")
        if not 0.0 <= self.input_dropout < 1.0:
            raise DomainError("input_dropout must lie in [0, 1)")

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].out_dim

    def parameters(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out.extend((layer.weight, layer.bias))
        return out

    def copy(self) -> "MlpModel":
        return MlpModel(
            [Layer(l.weight.copy(), l.bias.copy(), l.activation, l.slope) for l in self.layers],
            self.input_dropout,
        )

    def __call__(self, batch) -> np.ndarray:
        return mlp_forward(self, batch)


@dataclass
class GradientTape:
    """Forward cache for one batch plus the gradients computed from it."""

    inputs: list = field(default_factory=list)  # input to each layer
    outputs: list = field(default_factory=list)  # post-activation output of each layer
    dropout_mask: Optional[np.ndarray] = None
    weight_grads: list = field(default_factory=list)
    bias_grads: list = field(default_factory=list)
    input_grad: Optional[np.ndarray] = None

    @property
    def recorded(self) -> bool:
        return bool(self.inputs)

    def zero(self):
        self.weight_grads = [np.zeros_like(g) for g in self.weight_grads]
        self.bias_grads = [np.zeros_like(g) for g in self.bias_grads]
        self.input_grad = None

    def gradients(self) -> list[np.ndarray]:
        """Gradients in the same order as :meth:`MlpModel.parameters`."""
        out = []
        for gw, gb in zip(self.weight_grads, self.bias_grads):
            out.extend((gw, gb))
        return out


def _activate(z: np.ndarray, layer: Layer) -> np.ndarray:
    if layer.activation == "leaky_relu":
        return np.where(z > 0, z, layer.slope * z)
    if layer.activation == "sigmoid":
        return _sigmoid(z)
    return z


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # clipping keeps outputs strictly inside (0, 1) in float64
    z = np.clip(z, -36.0, 36.0)
    return 1.0 / (1.0 + np.exp(-z))


def mlp_forward(
    model: MlpModel,
    batch,
    tape: Optional[GradientTape] = None,
    rng: Optional[np.random.Generator] = None,
) -> np.ndarray:
    """Run ``batch`` (rows x input_dim) through ``model``.

    Input dropout is applied only when an ``rng`` is supplied (training mode).
    When ``tape`` is given, every layer input/output is cached on it.
    """
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != model.input_dim:
        raise ShapeError(f"batch has shape {x.shape}, model expects {model.input_dim} columns")
    mask = None
    if rng is not None and model.input_dropout > 0:
        keep = 1.0 - model.input_dropout
        mask = (rng.random(x.shape) < keep) / keep
        x = x * mask
    if tape is not None:
        tape.inputs, tape.outputs = [], []
        tape.dropout_mask = mask
        tape.weight_grads, tape.bias_grads, tape.input_grad = [], [], None
    for layer in model.layers:
        if tape is not None:
            tape.inputs.append(x)
        x = _activate(x @ layer.weight.T + layer.bias, layer)
        if tape is not None:
            tape.outputs.append(x)
    return x


def mlp_backward(
    model: MlpModel,
    tape: GradientTape,
    output_grad,
    logit_grad: bool = False,
) -> GradientTape:
    """Backpropagate ``output_grad`` (dLoss/dOutput) through the recorded pass.

    With ``logit_grad=True`` the gradient is taken to be with respect to the
    pre-activation of the final layer, which skips the sigmoid derivative and
    avoids dividing by p(1 - p) for saturated probabilities.
    """
    if not tape.recorded:
        raise StateError("backward called before a recorded forward pass")
    g = np.asarray(output_grad, dtype=np.float64)
    if g.shape != tape.outputs[-1].shape:
        raise ShapeError(f"output_grad shape {g.shape} != output shape {tape.outputs[-1].shape}")
    n = len(model.layers)
    wgrads: list = [None] * n
    bgrads: list = [None] * n
    for i in range(n - 1, -1, -1):
        layer = model.layers[i]
        out = tape.outputs[i]
        if i == n - 1 and logit_grad:
            dz = g
        elif layer.activation == "leaky_relu":
            dz = np.where(out > 0, g, layer.slope * g)
        elif layer.activation == "sigmoid":
            dz = g * out * (1.0 - out)
        else:
            dz = g
        wgrads[i] = dz.T @ tape.inputs[i]
        bgrads[i] = dz.sum(axis=0)
        g = dz @ layer.weight
    if tape.dropout_mask is not None:
        g = g * tape.dropout_mask
    tape.weight_grads, tape.bias_grads, tape.input_grad = wgrads, bgrads, g
    return tape


def xavier_layer(fan_in: int, fan_out: int, activation: str, rng: np.random.Generator) -> Layer:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    weight = rng.uniform(-limit, limit, size=(fan_out, fan_in))
    return Layer(weight, np.zeros(fan_out), activation)


def build_mlp(
    dims: list[int],
    head: str,
    rng: np.random.Generator,
    input_dropout: float = 0.0,
) -> MlpModel:
    """Leaky-ReLU hidden layers between ``dims[0]`` and ``dims[-1]`` with a ``head`` activation."""
    layers = []
    for i, (a, b) in enumerate(zip(dims, dims[1:])):
        act = head if i == len(dims) - 2 else "leaky_relu"
        layers.append(xavier_layer(a, b, act, rng))
    return MlpModel(layers, input_dropout)


def build_generator(dim: int, rng: np.random.Generator, hidden: Optional[int] = None, depth: int = 2) -> MlpModel:
    width = hidden if hidden is not None else max(512, 2 * dim)
    return build_mlp([dim] + [width] * depth + [dim], "identity", rng)


def build_discriminator(
    dim: int,
    rng: np.random.Generator,
    hidden: int = 512,
    depth: int = 2,
    input_dropout: float = 0.1,
) -> MlpModel:
    return build_mlp([dim] + [hidden] * depth + [1], "sigmoid", rng, input_dropout)


def identity_generator(dim: int) -> MlpModel:
    return MlpModel([Layer(np.eye(dim), np.zeros(dim), "identity")])


class Optimizer:
    """SGD or Adam over the parameter list of one model."""

    def __init__(self, method: str = "adam", lr: float = 1e-4, beta1: float = 0.5,
                 beta2: float = 0.999, eps: float = 1e-8):
        if method not in ("sgd", "adam"):
            raise DomainError(f"unknown optimizer {method!r}")
        self.method = method
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m: list[np.ndarray] = []
        self.v: list[np.ndarray] = []

    def step(self, model: MlpModel, tape: GradientTape) -> MlpModel:
        params = model.parameters()
        grads = tape.gradients()
        if len(grads) != len(params):
            raise ShapeError("tape does not hold gradients for every parameter")
        for i, (p, g) in enumerate(zip(params, grads)):
            if g.shape != p.shape:
                raise ShapeError(f"gradient {i} has shape {g.shape}, parameter {p.shape}")
            if not np.all(np.isfinite(g)):
                kind = "weight" if i % 2 == 0 else "bias"
                raise NumericError(f"non-finite {kind} gradient in layer {i // 2}")
        self.step_count += 1
        if self.method == "sgd":
            for p, g in zip(params, grads):
                p -= self.lr * g
            return model
        if not self.m:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        t = self.step_count
        c1 = 1.0 - self.beta1 ** t
        c2 = 1.0 - self.beta2 ** t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        return model

    def to_dict(self) -> dict:
        return {"method": self.method, "lr": self.lr, "beta1": self.beta1,
                "beta2": self.beta2, "eps": self.eps}


def cosine_similarity(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"vectors differ in shape: {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise DomainError("cosine similarity of a zero-norm vector is undefined")
    return float(np.clip(np.dot(a / na, b / nb), -1.0, 1.0))


def rowwise_cosine(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Cosine between matching rows of two equally shaped matrices."""
    if a.shape != b.shape:
        raise ShapeError(f"batches differ in shape: {a.shape} vs {b.shape}")
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    if np.any(na == 0) or np.any(nb == 0):
        raise DomainError("zero-norm row in cosine computation")
    return np.einsum("ij,ij->i", a, b) / (na * nb)


# -- serialization -----------------------------------------------------------

def model_to_dict(model: MlpModel) -> dict:
    return {
        "format": "ucan-mlp/1",
        "input_dim": model.input_dim,
        "output_dim": model.output_dim,
        "input_dropout": model.input_dropout,
        "layers": [
            {
                "in": l.in_dim,
                "out": l.out_dim,
                "activation": l.activation,
                "slope": l.slope,
                # repr() of a float is the shortest string that round-trips
                "weight": [float(v) for v in l.weight.ravel()],
                "bias": [float(v) for v in l.bias],
            }
            for l in model.layers
        ],
    }


def model_from_dict(doc: dict) -> MlpModel:
    try:
        layers = []
        for spec in doc["layers"]:
            w = np.array(spec["weight"], dtype=np.float64).reshape(spec["out"], spec["in"])
            layers.append(Layer(w, np.array(spec["bias"], dtype=np.float64),
                                spec["activation"], spec.get("slope", 0.2)))
        model = MlpModel(layers, doc.get("input_dropout", 0.0))
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"malformed model document: {exc}") from exc
    if model.input_dim != doc.get("input_dim", model.input_dim):
        raise ParseError("declared input_dim does not match layers")
    return model


def save_model(model: MlpModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_dict(model), fh)


def load_model(path) -> MlpModel:
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(str(exc), path=path) from exc
    return model_from_dict(doc)
