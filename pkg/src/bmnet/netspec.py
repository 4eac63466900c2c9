"""Declarative architecture descriptions and the desk-scale model builders.

A NetworkSpec is a JSON-serializable layer list with enough geometry to
validate shape chaining without instantiating weights.  Residual blocks
carry their body layers and an optional 1x1 projection; everything else is
a flat entry.  Convertible defaults to true for conv/fc and false
elsewhere; only conv/fc layers may ever be converted.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

SPEC_FORMAT = "bmnet-spec-v1"


class SpecError(ValueError):
    """Malformed or internally inconsistent network description."""


@dataclass
class LayerSpec:
    kind: str
    id: str | None = None
    filters: int | None = None      # conv F
    in_channels: int | None = None  # conv C
    kernel: int | None = None       # conv K
    stride: int = 1
    padding: str = "same"
    inputs: int | None = None       # fc P
    units: int | None = None        # fc Q
    channels: int | None = None     # batchnorm
    activation: str = "identity"
    convertible: bool | None = None
    body: list["LayerSpec"] | None = None
    projection: "LayerSpec | None" = None

    def is_convertible(self) -> bool:
        if self.kind not in ("conv", "fc"):
            return False
        return True if self.convertible is None else self.convertible


@dataclass
class NetworkSpec:
    name: str
    input_shape: tuple[int, int, int]
    layers: list[LayerSpec] = field(default_factory=list)


@dataclass
class ConvGeometry:
    """Resolved geometry of one conv layer: output spatial extents included."""

    layer_id: str
    F: int
    C: int
    K: int
    L: int
    M: int


@dataclass
class FcGeometry:
    layer_id: str
    P: int
    Q: int


def _chain_layer(spec: LayerSpec, shape, where: str):
    kind = spec.kind
    if kind == "conv":
        if len(shape) != 3:
            raise SpecError(f"{where}: conv needs an HxWxC input, has {shape}")
        h, w, c = shape
        if spec.in_channels != c:
            raise SpecError(f"{where}: conv declares {spec.in_channels} input channels but receives {c}")
        if spec.kernel is None or spec.kernel < 1 or spec.filters is None or spec.filters < 1:
            raise SpecError(f"{where}: conv needs kernel >= 1 and filters >= 1")
        if spec.padding == "same":
            ho, wo = -(-h // spec.stride), -(-w // spec.stride)
        elif spec.padding == "valid":
            if h < spec.kernel or w < spec.kernel:
                raise SpecError(f"{where}: kernel {spec.kernel} larger than input {h}x{w}")
            ho = (h - spec.kernel) // spec.stride + 1
            wo = (w - spec.kernel) // spec.stride + 1
        else:
            raise SpecError(f"{where}: unknown padding {spec.padding!r}")
        return (ho, wo, spec.filters)
    if kind == "fc":
        p = 1
        for e in shape:
            p *= e
        if spec.inputs != p:
            raise SpecError(f"{where}: fc declares {spec.inputs} inputs but receives {p}")
        if spec.units is None or spec.units < 1:
            raise SpecError(f"{where}: fc needs units >= 1")
        return (spec.units,)
    if kind == "relu" or kind == "softmax":
        return shape
    if kind == "batchnorm":
        if spec.channels != shape[-1]:
            raise SpecError(f"{where}: batchnorm over {spec.channels} channels but input has {shape[-1]}")
        return shape
    if kind == "max-pool":
        if len(shape) != 3 or shape[0] % 2 or shape[1] % 2:
            raise SpecError(f"{where}: max-pool needs even HxWxC input, has {shape}")
        return (shape[0] // 2, shape[1] // 2, shape[2])
    if kind == "global-avg-pool":
        if len(shape) != 3:
            raise SpecError(f"{where}: global-avg-pool needs HxWxC input, has {shape}")
        return (shape[2],)
    if kind == "residual-block":
        inner = shape
        for i, child in enumerate(spec.body or []):
            inner = _chain_layer(child, inner, f"{where}.body[{i}]")
        short = shape if spec.projection is None else _chain_layer(spec.projection, shape, f"{where}.proj")
        if inner != short:
            raise SpecError(f"{where}: residual endpoints disagree, body {inner} vs shortcut {short}")
        return inner
    raise SpecError(f"{where}: unknown layer kind {kind!r}")


def validate(spec: NetworkSpec) -> tuple[int, ...]:
    """Chain shapes through the network; returns the output shape."""
    shape = tuple(spec.input_shape)
    for i, layer in enumerate(spec.layers):
        where = layer.id or f"layers[{i}]"
        shape = _chain_layer(layer, shape, where)
    return shape


def _walk_with_shapes(spec: NetworkSpec):
    """Yield (dotted_id, LayerSpec, input_shape) over all layers, blocks expanded."""
    shape = tuple(spec.input_shape)
    for i, layer in enumerate(spec.layers):
        where = layer.id or f"layers[{i}]"
        if layer.kind == "residual-block":
            counts: dict[str, int] = {}
            inner = shape
            for child in layer.body or []:
                base = {"conv": "conv", "fc": "fc", "batchnorm": "bn", "relu": "relu",
                        "max-pool": "pool", "global-avg-pool": "gap"}.get(child.kind, child.kind)
                counts[base] = counts.get(base, 0) + 1
                yield f"{where}.{base}{counts[base]}", child, inner
                inner = _chain_layer(child, inner, where)
            if layer.projection is not None:
                yield f"{where}.proj", layer.projection, shape
        else:
            yield where, layer, shape
        shape = _chain_layer(layer, shape, where)


def conv_geometries(spec: NetworkSpec) -> list[ConvGeometry]:
    """All conv layers with resolved output extents, topological order."""
    out = []
    for lid, layer, shape in _walk_with_shapes(spec):
        if layer.kind == "conv":
            oshape = _chain_layer(layer, shape, lid)
            out.append(ConvGeometry(lid, layer.filters, layer.in_channels, layer.kernel, oshape[0], oshape[1]))
    return out


def fc_geometries(spec: NetworkSpec) -> list[FcGeometry]:
    out = []
    for lid, layer, shape in _walk_with_shapes(spec):
        if layer.kind == "fc":
            out.append(FcGeometry(lid, layer.inputs, layer.units))
    return out


def convertible_layer_ids(spec: NetworkSpec) -> list[str]:
    return [lid for lid, layer, _ in _walk_with_shapes(spec) if layer.is_convertible()]


# ---------------------------------------------------------------------------
# serialization


_LAYER_FIELDS = (
    "id", "kind", "filters", "in_channels", "kernel", "stride", "padding",
    "inputs", "units", "channels", "activation", "convertible",
)
_DEFAULTS = {"stride": 1, "padding": "same", "activation": "identity"}


def _layer_to_dict(layer: LayerSpec) -> dict:
    d = {}
    for f in _LAYER_FIELDS:
        v = getattr(layer, f)
        if v is None or (f in _DEFAULTS and v == _DEFAULTS[f]):
            continue
        d[f] = v
    if layer.body is not None:
        d["body"] = [_layer_to_dict(c) for c in layer.body]
    if layer.projection is not None:
        d["projection"] = _layer_to_dict(layer.projection)
    return d


def _layer_from_dict(d: dict, where: str) -> LayerSpec:
    if "kind" not in d:
        raise SpecError(f"{where}: layer entry without a kind")
    known = set(_LAYER_FIELDS) | {"body", "projection"}
    unknown = set(d) - known
    if unknown:
        raise SpecError(f"{where}: unknown fields {sorted(unknown)}")
    kwargs = {f: d[f] for f in _LAYER_FIELDS if f in d}
    body = d.get("body")
    if body is not None:
        kwargs["body"] = [_layer_from_dict(c, f"{where}.body[{i}]") for i, c in enumerate(body)]
    proj = d.get("projection")
    if proj is not None:
        kwargs["projection"] = _layer_from_dict(proj, f"{where}.proj")
    return LayerSpec(**kwargs)


def to_json(spec: NetworkSpec) -> str:
    doc = {
        "format": SPEC_FORMAT,
        "name": spec.name,
        "input_shape": list(spec.input_shape),
        "layers": [_layer_to_dict(l) for l in spec.layers],
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def from_json(text: str) -> NetworkSpec:
    doc = json.loads(text)
    if doc.get("format") != SPEC_FORMAT:
        raise SpecError(f"unsupported spec format {doc.get('format')!r}")
    layers = [_layer_from_dict(d, d.get("id", f"layers[{i}]")) for i, d in enumerate(doc["layers"])]
    spec = NetworkSpec(doc.get("name", ""), tuple(doc["input_shape"]), layers)
    validate(spec)
    return spec


def save_spec(spec: NetworkSpec, path) -> None:
    Path(path).write_text(to_json(spec))


def load_spec(path) -> NetworkSpec:
    return from_json(Path(path).read_text())


# ---------------------------------------------------------------------------
# builders


def build_lenet_like(num_classes: int = 10, input_shape: tuple[int, int, int] = (28, 28, 1)) -> NetworkSpec:
    """Small conv net for desk-scale digit experiments: two 3x3 conv layers
    (16 and 32 filters, each followed by 2x2 max-pooling) and two fc layers.
    Four convertible layers in total."""
    h, w, c = input_shape
    flat = (h // 4) * (w // 4) * 32
    layers = [
        LayerSpec(kind="conv", id="conv1", filters=16, in_channels=c, kernel=3, activation="relu"),
        LayerSpec(kind="max-pool", id="pool1"),
        LayerSpec(kind="conv", id="conv2", filters=32, in_channels=16, kernel=3, activation="relu"),
        LayerSpec(kind="max-pool", id="pool2"),
        LayerSpec(kind="fc", id="fc1", inputs=flat, units=64, activation="relu"),
        LayerSpec(kind="fc", id="fc2", inputs=64, units=num_classes),
    ]
    spec = NetworkSpec("lenet-like", tuple(input_shape), layers)
    validate(spec)
    return spec


def _resblock(block_id: str, c_in: int, f: int, stride: int, project: bool) -> LayerSpec:
    body = [
        LayerSpec(kind="batchnorm", channels=c_in),
        LayerSpec(kind="relu"),
        LayerSpec(kind="conv", filters=f, in_channels=c_in, kernel=3, stride=stride),
        LayerSpec(kind="batchnorm", channels=f),
        LayerSpec(kind="relu"),
        LayerSpec(kind="conv", filters=f, in_channels=f, kernel=3),
    ]
    proj = None
    if project:
        proj = LayerSpec(kind="conv", filters=f, in_channels=c_in, kernel=1, stride=stride)
    return LayerSpec(kind="residual-block", id=block_id, body=body, projection=proj)


def build_resnet22(num_classes: int = 10, input_shape: tuple[int, int, int] = (32, 32, 3)) -> NetworkSpec:
    """Pre-activation residual network with exactly 22 convolutional layers.

    Initial 3x3 conv, then three stages of three residual blocks with
    16/32/64 filters; the first block of each stage carries a 1x1
    projection conv and stages 2 and 3 downsample by stride 2.  One conv
    plus 9 blocks x 2 convs plus 3 projections = 22.  Global average
    pooling and a final fc close the network.
    """
    c = input_shape[2]
    layers: list[LayerSpec] = [
        LayerSpec(kind="conv", id="conv0", filters=16, in_channels=c, kernel=3),
    ]
    c_in = 16
    for stage, f in enumerate((16, 32, 64), start=1):
        stride = 1 if stage == 1 else 2
        for b in range(3):
            layers.append(_resblock(f"s{stage}b{b}", c_in, f, stride if b == 0 else 1, project=(b == 0)))
            c_in = f
    layers += [
        LayerSpec(kind="batchnorm", id="bn_out", channels=64),
        LayerSpec(kind="relu", id="relu_out"),
        LayerSpec(kind="global-avg-pool", id="gap"),
        LayerSpec(kind="fc", id="fc", inputs=64, units=num_classes),
    ]
    spec = NetworkSpec("resnet22", tuple(input_shape), layers)
    validate(spec)
    return spec
