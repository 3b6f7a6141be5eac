"""Feedforward networks (MLPs) with JSON checkpointing.

Hidden layers apply a smooth activation (tanh by default); the output layer
is affine.  Checkpoints are single JSON documents serialized through Python
float repr, which round-trips IEEE doubles exactly.
"""

from __future__ import annotations

import json
import os
import tempfile

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ArgumentError, ConfigError, NumericsError
from .rng import RngStream

CHECKPOINT_FORMAT_VERSION = 1

_ACTIVATIONS = {
    "tanh": np.tanh,
    "identity": lambda x: x,
}

_ACTIVATION_OPS = {
    "tanh": ad.tanh,
    "identity": lambda t: t,
}


def glorot_uniform(rng: RngStream, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, (fan_in, fan_out))


class Mlp:
    """A fully-connected network: affine layers with activations between."""

    def __init__(self, layer_dims, activation: str = "tanh", rng: RngStream | None = None,
                 weights=None, biases=None):
        layer_dims = [int(d) for d in layer_dims]
        if len(layer_dims) < 2 or any(d < 1 for d in layer_dims):
            raise ConfigError(f"invalid layer dims {layer_dims}")
        if activation not in _ACTIVATIONS:
            raise ConfigError(f"unknown activation '{activation}'")
        self.layer_dims = layer_dims
        self.activation = activation
        if weights is None:
            if rng is None:
                raise ConfigError("Mlp needs either an RngStream or explicit weights")
            weights = [glorot_uniform(rng, i, o)
                       for i, o in zip(layer_dims[:-1], layer_dims[1:])]
            biases = [np.zeros(o) for o in layer_dims[1:]]
        self.weights = [Tensor(np.asarray(w, dtype=np.float64), requires_grad=True)
                        for w in weights]
        self.biases = [Tensor(np.asarray(b, dtype=np.float64), requires_grad=True)
                       for b in biases]
        for li, (w, b, i, o) in enumerate(zip(self.weights, self.biases,
                                              layer_dims[:-1], layer_dims[1:])):
            if w.data.shape != (i, o) or b.data.shape != (o,):
                raise ConfigError(f"layer {li} parameter shapes inconsistent with dims")

    @property
    def d_in(self) -> int:
        return self.layer_dims[0]

    @property
    def d_out(self) -> int:
        return self.layer_dims[-1]

    def parameters(self) -> list[Tensor]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend([w, b])
        return out

    def set_trainable(self, trainable: bool) -> None:
        for p in self.parameters():
            p.requires_grad = trainable

    def forward(self, x: Tensor) -> Tensor:
        """Graph-building forward pass for a (batch, d_in) tensor."""
        if not isinstance(x, Tensor):
            x = Tensor(x)
        if x.data.ndim != 2 or x.data.shape[1] != self.d_in:
            raise ArgumentError(
                f"expected input (batch, {self.d_in}), got {x.data.shape}"
            )
        act = _ACTIVATION_OPS[self.activation]
        h = x
        last = len(self.weights) - 1
        for li, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = ad.add(ad.matmul(h, w), b)
            if li != last:
                h = act(h)
        return h

    def predict(self, x: np.ndarray) -> np.ndarray:
        """Tape-free forward pass; same arithmetic as :meth:`forward`."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.d_in:
            raise ArgumentError(
                f"expected input (batch, {self.d_in}), got {x.shape}"
            )
        act = _ACTIVATIONS[self.activation]
        h = x
        last = len(self.weights) - 1
        for li, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w.data + b.data
            if not np.all(np.isfinite(h)):
                raise NumericsError(f"non-finite output at layer {li}")
            if li != last:
                h = act(h)
        return h

    # -- checkpointing --------------------------------------------------------

    def to_doc(self, rng_seed: int | None = None, config_digest: str | None = None) -> dict:
        return {
            "format_version": CHECKPOINT_FORMAT_VERSION,
            "layer_dims": list(self.layer_dims),
            "activation": self.activation,
            "layers": [
                {"weight": w.data.tolist(), "bias": b.data.tolist()}
                for w, b in zip(self.weights, self.biases)
            ],
            "rng_seed": rng_seed,
            "config_digest": config_digest,
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "Mlp":
        if doc.get("format_version") != CHECKPOINT_FORMAT_VERSION:
            raise ConfigError(f"unsupported checkpoint version {doc.get('format_version')}")
        weights = [np.asarray(layer["weight"], dtype=np.float64) for layer in doc["layers"]]
        biases = [np.asarray(layer["bias"], dtype=np.float64) for layer in doc["layers"]]
        return cls(doc["layer_dims"], doc["activation"], weights=weights, biases=biases)

    def save(self, path, rng_seed: int | None = None, config_digest: str | None = None) -> None:
        write_json_atomic(path, self.to_doc(rng_seed=rng_seed, config_digest=config_digest))

    @classmethod
    def load(cls, path) -> "Mlp":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_doc(json.load(fh))


def mlp_forward(model: Mlp, x):
    """Batched forward pass; dispatches on input type (Tensor vs ndarray)."""
    if isinstance(x, Tensor):
        return model.forward(x)
    return model.predict(x)


def write_json_atomic(path, doc: dict) -> None:
    """Serialize to JSON and rename into place, so readers never see partial files."""
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    payload = json.dumps(doc, sort_keys=True, indent=1)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
