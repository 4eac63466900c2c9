"""bmnet-v1 checkpoint format: a JSON tree with base64 float blobs.

Every layer entry records its kind, geometry, and weight arrays (raw
little-endian float64 bytes, base64-encoded), so save -> load -> save is
byte-identical.  Residual blocks nest their body and projection entries.
The optional meta object carries preprocessing state such as the CIFAR
mean image.
"""

from __future__ import annotations

import base64
import json
from pathlib import Path

import numpy as np

from . import layers as L
from .network import Network

CHECKPOINT_FORMAT = "bmnet-v1"


class CheckpointError(ValueError):
    """Unreadable or wrongly tagged checkpoint file."""


def _encode_array(arr: np.ndarray) -> dict:
    arr = np.ascontiguousarray(arr, dtype=np.float64)
    return {
        "dtype": "<f8",
        "shape": list(arr.shape),
        "data": base64.b64encode(arr.tobytes()).decode("ascii"),
    }


def _decode_array(d: dict) -> np.ndarray:
    if d.get("dtype") != "<f8":
        raise CheckpointError(f"unsupported blob dtype {d.get('dtype')!r}")
    raw = base64.b64decode(d["data"])
    return np.frombuffer(raw, dtype="<f8").reshape(d["shape"]).copy()


def _layer_to_doc(layer) -> dict:
    kind = layer.kind
    doc: dict = {"kind": kind}
    if kind == "fc":
        doc.update(act=layer.act, convertible=layer.convertible,
                   weights={"w": _encode_array(layer.w), "b": _encode_array(layer.b)})
    elif kind == "conv":
        doc.update(act=layer.act, stride=layer.stride, padding=layer.padding,
                   convertible=layer.convertible,
                   weights={"w": _encode_array(layer.w), "b": _encode_array(layer.b)})
    elif kind == "bm-fc":
        w = layer.weights
        doc.update(act=layer.act, neg_sentinel=w.neg_sentinel,
                   weights={"vplus": _encode_array(w.vplus), "vminus": _encode_array(w.vminus),
                            "v": _encode_array(w.v)})
    elif kind == "bm-conv":
        w = layer.weights
        doc.update(act=layer.act, stride=layer.stride, padding=layer.padding,
                   neg_sentinel=w.neg_sentinel,
                   weights={"vplus": _encode_array(w.vplus), "vminus": _encode_array(w.vminus),
                            "v": _encode_array(w.v)})
    elif kind == "batchnorm":
        doc.update(momentum=layer.momentum, eps=layer.eps,
                   weights={"gamma": _encode_array(layer.gamma), "beta": _encode_array(layer.beta),
                            "running_mean": _encode_array(layer.running_mean),
                            "running_var": _encode_array(layer.running_var)})
    elif kind == "residual-block":
        doc["body"] = [_layer_to_doc(c) for c in layer.body]
        doc["projection"] = _layer_to_doc(layer.projection) if layer.projection is not None else None
    elif kind in ("relu", "max-pool", "global-avg-pool", "softmax"):
        pass
    else:
        raise CheckpointError(f"cannot serialize layer kind {kind!r}")
    return doc


def _layer_from_doc(doc: dict):
    kind = doc.get("kind")
    w = doc.get("weights", {})
    if kind == "fc":
        return L.Dense(_decode_array(w["w"]), _decode_array(w["b"]),
                       act=doc["act"], convertible=doc["convertible"])
    if kind == "conv":
        return L.Conv2D(_decode_array(w["w"]), _decode_array(w["b"]), stride=doc["stride"],
                        padding=doc["padding"], act=doc["act"], convertible=doc["convertible"])
    if kind == "bm-fc":
        bw = L.BMWeights(_decode_array(w["vplus"]), _decode_array(w["vminus"]),
                         _decode_array(w["v"]), doc["neg_sentinel"])
        return L.BMDense(bw, act=doc["act"])
    if kind == "bm-conv":
        bw = L.BMWeights(_decode_array(w["vplus"]), _decode_array(w["vminus"]),
                         _decode_array(w["v"]), doc["neg_sentinel"])
        return L.BMConv2D(bw, stride=doc["stride"], padding=doc["padding"], act=doc["act"])
    if kind == "batchnorm":
        bn = L.BatchNorm(len(_decode_array(w["gamma"])), momentum=doc["momentum"], eps=doc["eps"])
        bn.gamma = _decode_array(w["gamma"])
        bn.beta = _decode_array(w["beta"])
        bn.running_mean = _decode_array(w["running_mean"])
        bn.running_var = _decode_array(w["running_var"])
        return bn
    if kind == "relu":
        return L.ReLU()
    if kind == "max-pool":
        return L.MaxPool2()
    if kind == "global-avg-pool":
        return L.GlobalAvgPool()
    if kind == "softmax":
        return L.Softmax()
    if kind == "residual-block":
        body = [_layer_from_doc(c) for c in doc["body"]]
        proj = _layer_from_doc(doc["projection"]) if doc.get("projection") is not None else None
        return L.ResidualBlock(body, proj)
    raise CheckpointError(f"unknown layer kind {kind!r} in checkpoint")


def network_to_doc(net: Network, meta: dict | None = None) -> dict:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "input_shape": list(net.input_shape),
        "layers": [{"id": lid, **_layer_to_doc(layer)} for lid, layer in net.slots],
    }
    if meta:
        doc["meta"] = meta
    return doc


def network_from_doc(doc: dict) -> tuple[Network, dict]:
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"unsupported checkpoint format {doc.get('format')!r}")
    named = [(entry["id"], _layer_from_doc(entry)) for entry in doc["layers"]]
    return Network(named, tuple(doc["input_shape"])), doc.get("meta", {})


def save_checkpoint(net: Network, path, meta: dict | None = None) -> None:
    text = json.dumps(network_to_doc(net, meta), indent=1, sort_keys=True)
    Path(path).write_text(text + "\n")


def load_checkpoint(path) -> tuple[Network, dict]:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise CheckpointError(f"checkpoint is not valid JSON: {e}") from e
    return network_from_doc(doc)


def encode_mean_image(mean: np.ndarray | None) -> dict | None:
    return None if mean is None else _encode_array(mean)


def decode_mean_image(meta: dict) -> np.ndarray | None:
    blob = meta.get("mean_image")
    return None if blob is None else _decode_array(blob)
