"""Runtime network container: an ordered list of named layers.

Residual blocks nest their body and optional projection; every layer is
addressable by a stable dotted id (block children are named after their
base kind, e.g. "s2b0.conv1", "s2b0.proj"), and conversion keeps ids
stable because a converted conv/fc keeps its base name.
"""

from __future__ import annotations

import numpy as np

from . import layers as L
from .layers import ResidualBlock
from .netspec import LayerSpec, NetworkSpec, validate
from .opcount import OpCount
from .tensor import Tensor

_BASE_NAMES = {
    "conv": "conv",
    "bm-conv": "conv",
    "fc": "fc",
    "bm-fc": "fc",
    "batchnorm": "bn",
    "relu": "relu",
    "max-pool": "pool",
    "global-avg-pool": "gap",
    "softmax": "softmax",
    "residual-block": "block",
}


def _child_names(layers) -> list[str]:
    counts: dict[str, int] = {}
    names = []
    for layer in layers:
        base = _BASE_NAMES[layer.kind]
        counts[base] = counts.get(base, 0) + 1
        names.append(f"{base}{counts[base]}")
    return names


class Network:
    def __init__(self, named_layers: list[tuple[str, object]], input_shape: tuple[int, ...]):
        self.slots = [[lid, layer] for lid, layer in named_layers]
        self.input_shape = tuple(input_shape)

    def walk(self):
        """Yield (id, layer, setter) over all layers, blocks included."""
        for slot in self.slots:
            lid, layer = slot

            def top_setter(new, slot=slot):
                slot[1] = new

            yield lid, layer, top_setter
            if isinstance(layer, ResidualBlock):
                names = _child_names(layer.body)
                for i, child in enumerate(layer.body):
                    def body_setter(new, layer=layer, i=i):
                        layer.body[i] = new

                    yield f"{lid}.{names[i]}", child, body_setter
                if layer.projection is not None:
                    def proj_setter(new, layer=layer):
                        layer.projection = new

                    yield f"{lid}.proj", layer.projection, proj_setter

    def layer(self, layer_id: str):
        for lid, layer, _ in self.walk():
            if lid == layer_id:
                return layer
        raise KeyError(f"no layer named {layer_id!r}")

    def replace_layer(self, layer_id: str, new_layer) -> None:
        for lid, _, setter in self.walk():
            if lid == layer_id:
                setter(new_layer)
                return
        raise KeyError(f"no layer named {layer_id!r}")

    def convertible_layers(self) -> list[str]:
        """Ids of conv/fc layers still in classical form, topological order."""
        return [lid for lid, layer, _ in self.walk() if layer.kind in ("conv", "fc") and layer.convertible]

    def forward(self, x: Tensor, train: bool = False, ops: OpCount | None = None) -> Tensor:
        h = x
        for _, layer in self.slots:
            h = layer.forward(h, train=train, ops=ops)
        return h

    def backward(self, grad: Tensor) -> Tensor:
        g = grad
        for _, layer in reversed(self.slots):
            g = layer.backward(g)
        return g

    def named_parameters(self) -> dict[str, np.ndarray]:
        out = {}
        for lid, layer, _ in self.walk():
            for pname, arr in layer.parameters().items():
                out[f"{lid}.{pname}"] = arr
        return out

    def named_gradients(self) -> dict[str, np.ndarray]:
        out = {}
        for lid, layer, _ in self.walk():
            for pname, arr in layer.gradients().items():
                out[f"{lid}.{pname}"] = arr
        return out

    def set_approx_math(self, enabled: bool) -> None:
        for _, layer, _ in self.walk():
            if hasattr(layer, "approx"):
                layer.approx = enabled

    def named_state(self) -> dict[str, np.ndarray]:
        """Trainable parameters plus batchnorm running statistics: everything
        a checkpoint restore needs."""
        out = dict(self.named_parameters())
        for lid, layer, _ in self.walk():
            if layer.kind == "batchnorm":
                out[f"{lid}.running_mean"] = layer.running_mean
                out[f"{lid}.running_var"] = layer.running_var
        return out

    def snapshot_state(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.named_state().items()}

    def restore_state(self, snap: dict[str, np.ndarray]) -> None:
        state = self.named_state()
        if set(state) != set(snap):
            raise KeyError("snapshot does not match network structure")
        for k, v in state.items():
            v[...] = snap[k]

    def clear_caches(self) -> None:
        for _, layer, _ in self.walk():
            if hasattr(layer, "_cache"):
                layer._cache = None
            if hasattr(layer, "last_terms"):
                layer.last_terms = None
            if hasattr(layer, "_mask"):
                layer._mask = None


def _he_normal(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)


def _make_layer(spec: LayerSpec, rng: np.random.Generator):
    if spec.kind == "conv":
        k, c, f = spec.kernel, spec.in_channels, spec.filters
        w = _he_normal(rng, (k, k, c, f), k * k * c)
        return L.Conv2D(w, np.zeros(f), stride=spec.stride, padding=spec.padding,
                        act=spec.activation, convertible=spec.is_convertible())
    if spec.kind == "fc":
        w = _he_normal(rng, (spec.inputs, spec.units), spec.inputs)
        return L.Dense(w, np.zeros(spec.units), act=spec.activation, convertible=spec.is_convertible())
    if spec.kind == "relu":
        return L.ReLU()
    if spec.kind == "batchnorm":
        return L.BatchNorm(spec.channels)
    if spec.kind == "max-pool":
        return L.MaxPool2()
    if spec.kind == "global-avg-pool":
        return L.GlobalAvgPool()
    if spec.kind == "softmax":
        return L.Softmax()
    if spec.kind == "residual-block":
        body = [_make_layer(c, rng) for c in spec.body or []]
        proj = _make_layer(spec.projection, rng) if spec.projection is not None else None
        return ResidualBlock(body, proj)
    raise ValueError(f"unknown layer kind {spec.kind!r}")


def instantiate(spec: NetworkSpec, rng: np.random.Generator) -> Network:
    """Build a runtime network with He-initialized weights and zero biases.

    Construction order is the spec order, so a given generator state yields
    bit-identical initial weights.
    """
    validate(spec)
    named = []
    for i, lspec in enumerate(spec.layers):
        lid = lspec.id or f"layers[{i}]"
        named.append((lid, _make_layer(lspec, rng)))
    net = Network(named, spec.input_shape)
    net.spec = spec
    return net
