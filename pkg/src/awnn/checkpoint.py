"""Single-file model checkpoints.

Layout::

    b"AWNNCKPT"                      8-byte magic
    header length                    uint64, little-endian
    header                           UTF-8 JSON, sorted keys, compact
    payload                          float64 little-endian arrays, row-major

Each weight matrix in the header declares its byte ``offset`` (relative to the
start of the payload), ``rows`` and ``cols``.  Floats stored in the header use
the shortest repr that round-trips exactly.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .importance import ImportanceDist
from .model import AdaptiveLayer, AwnnModel

MAGIC = b"AWNNCKPT"
FORMAT_VERSION = 1
_LEN = struct.Struct("<Q")
_F8 = np.dtype("<f8")


class CheckpointError(ValueError):
    pass


def _matrix_entry(w, offset):
    return {"rows": int(w.shape[0]), "cols": int(w.shape[1]), "offset": offset}


def to_bytes(model: AwnnModel, metadata: dict = None) -> bytes:
    blobs, layers = [], []
    offset = 0
    for layer in model.hidden:
        entry = _matrix_entry(layer.weights, offset)
        entry.update(
            nu=float(layer.dist.nu),
            k=float(layer.dist.k),
            nu_min=float(layer.dist.nu_min),
            width=layer.width,
            activation=layer.activation,
            leaky_slope=float(layer.leaky_slope),
        )
        layers.append(entry)
        blobs.append(np.ascontiguousarray(layer.weights, dtype=_F8).tobytes())
        offset += len(blobs[-1])
    output = _matrix_entry(model.output_weights, offset)
    blobs.append(np.ascontiguousarray(model.output_weights, dtype=_F8).tobytes())
    offset += len(blobs[-1])

    meta = dict(model.metadata)
    meta.update(metadata or {})
    header = {
        "format_version": FORMAT_VERSION,
        "topology": {
            "input_dim": model.input_dim,
            "output_dim": model.output_dim,
            "hidden_layers": len(model.hidden),
            "activations": [layer.activation for layer in model.hidden],
            "task": model.task,
        },
        "layers": layers,
        "output": output,
        "preprocessing": {
            "input_shift": [float(v) for v in model.input_shift],
            "input_scale": [float(v) for v in model.input_scale],
        },
        "options": {
            "unit_importance": bool(model.unit_importance),
            "new_neuron_init": model.new_neuron_init,
            "rate_param": model.rate_param,
            "output_init": model.output_init,
        },
        "metadata": meta,
        "payload_bytes": offset,
    }
    text = json.dumps(header, sort_keys=True, separators=(",", ":"), allow_nan=False)
    raw = text.encode("utf-8")
    return MAGIC + _LEN.pack(len(raw)) + raw + b"".join(blobs)


def _matrix(payload, entry, what):
    try:
        rows, cols, offset = int(entry["rows"]), int(entry["cols"]), int(entry["offset"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"{what}: malformed matrix entry") from exc
    end = offset + rows * cols * _F8.itemsize
    if offset < 0 or end > len(payload):
        raise CheckpointError(f"{what}: payload is truncated")
    return np.frombuffer(payload[offset:end], dtype=_F8).reshape(rows, cols).astype(np.float64)


def from_bytes(data: bytes) -> AwnnModel:
    if len(data) < len(MAGIC) + _LEN.size or not data.startswith(MAGIC):
        raise CheckpointError("not an AWNN checkpoint (bad magic)")
    (hlen,) = _LEN.unpack_from(data, len(MAGIC))
    start = len(MAGIC) + _LEN.size
    if start + hlen > len(data):
        raise CheckpointError("header is truncated")
    try:
        header = json.loads(data[start:start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"header is not valid JSON: {exc}") from exc
    version = header.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported format_version {version!r} (expected {FORMAT_VERSION})")
    payload = data[start + hlen:]
    if len(payload) != header.get("payload_bytes"):
        raise CheckpointError(
            f"payload has {len(payload)} bytes, header declares {header.get('payload_bytes')}"
        )
    try:
        return _decode(header, payload)
    except (KeyError, TypeError) as exc:
        raise CheckpointError(f"header is missing or has a malformed field: {exc}") from exc


def _decode(header: dict, payload: bytes) -> AwnnModel:
    topo = header["topology"]
    hidden = []
    for i, entry in enumerate(header["layers"]):
        w = _matrix(payload, entry, f"layer {i}")
        if entry["width"] != w.shape[0]:
            raise CheckpointError(
                f"layer {i}: width field {entry['width']} does not match {w.shape[0]} weight rows"
            )
        if not entry["nu"] > 0:
            raise CheckpointError(f"layer {i}: rate must be positive")
        dist = ImportanceDist(entry["nu"], entry["k"], entry["nu_min"])
        hidden.append(AdaptiveLayer(w, dist, entry["activation"], entry["leaky_slope"]))
    if len(hidden) != topo["hidden_layers"]:
        raise CheckpointError("layer count does not match the topology")
    w_out = _matrix(payload, header["output"], "output layer")
    if w_out.shape[0] != topo["output_dim"]:
        raise CheckpointError("output rows do not match output_dim")
    opts = header["options"]
    pre = header["preprocessing"]
    try:
        return AwnnModel(
            topo["input_dim"],
            hidden,
            w_out,
            task=topo["task"],
            input_shift=np.asarray(pre["input_shift"], dtype=np.float64),
            input_scale=np.asarray(pre["input_scale"], dtype=np.float64),
            unit_importance=opts["unit_importance"],
            new_neuron_init=opts["new_neuron_init"],
            rate_param=opts["rate_param"],
            output_init=opts["output_init"],
            metadata=header.get("metadata", {}),
        )
    except ValueError as exc:
        raise CheckpointError(f"inconsistent shapes: {exc}") from exc


def save(model: AwnnModel, path, metadata: dict = None):
    Path(path).write_bytes(to_bytes(model, metadata))


def load(path) -> AwnnModel:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"{path}: no such checkpoint")
    return from_bytes(path.read_bytes())


def read_header(path) -> dict:
    data = Path(path).read_bytes()
    if not data.startswith(MAGIC):
        raise CheckpointError("not an AWNN checkpoint (bad magic)")
    (hlen,) = _LEN.unpack_from(data, len(MAGIC))
    start = len(MAGIC) + _LEN.size
    return json.loads(data[start:start + hlen].decode("utf-8"))
