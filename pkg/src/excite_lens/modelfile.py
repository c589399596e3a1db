"""EBN1 weight files.

Layout::

    b"EBN1"
    uint64 little-endian header length L
    L bytes of UTF-8 JSON header
    zero padding up to the next multiple of 8
    payload: raw little-endian float32 tensors, each starting at an
             8-byte aligned offset (offsets are relative to payload start)

The header carries ``version``, ``layers``, ``num_classes``,
``class_labels``, ``input_shape``, ``target_layer_default``,
``preprocess`` ({"mean": [...], "std": [...]}) and ``tensors``, a list of
{"name", "dtype": "f32", "shape", "offset", "length"} records.

A conv layer may carry ``params["bn"] = {"eps": ...}`` together with
tensors ``<ref>.bn.gamma/beta/mean/var``; these are folded into the conv
weight and bias on load, so loaded graphs never contain batch norm.
"""

import json
import struct

import numpy as np

from .errors import (BadMagicError, DanglingWeightRefError, ModelFormatError,
                     PayloadLengthError, VersionMismatchError)
from .model import LayerSpec, Model, ModelGraph, infer_shapes

MAGIC = b"EBN1"
VERSION = 1
BN_STATS = ("gamma", "beta", "mean", "var")


def _align(n, a=8):
    return (n + a - 1) // a * a


def save_model(model, path):
    g = model.graph
    names = sorted(model.weights)
    records, offset = [], 0
    for name in names:
        arr = np.asarray(model.weights[name], dtype="<f4")
        records.append({"name": name, "dtype": "f32", "shape": list(arr.shape),
                        "offset": offset, "length": arr.nbytes})
        offset = _align(offset + arr.nbytes)
    header = {
        "version": VERSION,
        "layers": [spec.to_json() for spec in g.layers],
        "num_classes": g.num_classes,
        "class_labels": list(g.class_labels),
        "input_shape": list(g.input_shape),
        "target_layer_default": g.target_layer_default,
        "preprocess": {"mean": list(g.mean), "std": list(g.std)},
        "tensors": records,
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    head = MAGIC + struct.pack("<Q", len(blob)) + blob
    head += b"\0" * (_align(len(head)) - len(head))
    payload = bytearray(offset)
    for rec, name in zip(records, names):
        arr = np.asarray(model.weights[name], dtype="<f4")
        payload[rec["offset"]:rec["offset"] + rec["length"]] = arr.tobytes()
    with open(path, "wb") as f:
        f.write(head)
        f.write(bytes(payload))


def read_raw(path):
    """Parse a weight file without folding or graph validation.

    Returns (header dict, {name: float32 array}).
    """
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != MAGIC:
        raise BadMagicError(f"{path}: bad magic {data[:4]!r}, expected {MAGIC!r}")
    if len(data) < 12:
        raise ModelFormatError(f"{path}: truncated header")
    (hlen,) = struct.unpack_from("<Q", data, 4)
    if 12 + hlen > len(data):
        raise ModelFormatError(f"{path}: truncated header")
    try:
        header = json.loads(data[12:12 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ModelFormatError(f"{path}: unreadable header: {e}") from None
    if header.get("version") != VERSION:
        raise VersionMismatchError(f"{path}: version {header.get('version')!r}, expected {VERSION}")
    start = _align(12 + hlen)
    payload = memoryview(data)[start:]
    weights = {}
    for rec in header.get("tensors", []):
        if rec.get("dtype") != "f32":
            raise ModelFormatError(f"{path}: tensor {rec['name']!r} has unsupported dtype {rec.get('dtype')!r}")
        shape = tuple(int(d) for d in rec["shape"])
        off, length = int(rec["offset"]), int(rec["length"])
        if off % 8:
            raise ModelFormatError(f"{path}: tensor {rec['name']!r} offset {off} is not 8-byte aligned")
        if length != 4 * int(np.prod(shape, dtype=np.int64)) or off + length > len(payload):
            raise PayloadLengthError(
                f"{path}: payload length mismatch for tensor {rec['name']!r} "
                f"(shape {shape}, declared {length} bytes at offset {off}, payload has {len(payload)})")
        arr = np.frombuffer(payload[off:off + length], dtype="<f4").reshape(shape)
        weights[rec["name"]] = arr.astype(np.float32)
    return header, weights


def fold_batchnorm(layers, weights):
    """Fold per-conv batch-norm statistics into conv weight/bias.

    Returns new (layers, weights); the input dict is not modified.
    """
    weights = dict(weights)
    out = []
    for spec in layers:
        bn = spec.params.get("bn") if spec.kind == "conv" else None
        if bn is None:
            out.append(spec)
            continue
        ref = spec.weight_ref
        keys = {s: f"{ref}.bn.{s}" for s in BN_STATS}
        missing = [k for k in keys.values() if k not in weights]
        if missing:
            raise DanglingWeightRefError(f"layer {spec.name!r}: missing batch-norm tensors {missing}")
        st = {s: weights.pop(k).astype(np.float64) for s, k in keys.items()}
        scale = st["gamma"] / np.sqrt(st["var"] + float(bn.get("eps", 1e-5)))
        w = weights[f"{ref}.weight"].astype(np.float64)
        b = weights[f"{ref}.bias"].astype(np.float64)
        weights[f"{ref}.weight"] = (w * scale[:, None, None, None]).astype(np.float32)
        weights[f"{ref}.bias"] = ((b - st["mean"]) * scale + st["beta"]).astype(np.float32)
        params = {k: v for k, v in spec.params.items() if k != "bn"}
        out.append(LayerSpec(spec.name, spec.kind, spec.inputs, params, spec.weight_ref))
    return out, weights


def load_model(path):
    header, weights = read_raw(path)
    try:
        layers = [LayerSpec.from_json(d) for d in header["layers"]]
        layers, weights = fold_batchnorm(layers, weights)
        pre = header["preprocess"]
        graph = ModelGraph(layers=layers, num_classes=int(header["num_classes"]),
                           input_shape=tuple(header["input_shape"]),
                           target_layer_default=header["target_layer_default"],
                           mean=pre["mean"], std=pre["std"],
                           class_labels=header.get("class_labels"))
    except (KeyError, TypeError) as e:
        raise ModelFormatError(f"{path}: malformed header: {e!r}") from None
    infer_shapes(graph, weights)
    for arr in weights.values():
        arr.flags.writeable = False
    return Model(graph, weights)
