"""Top-down Excitation Backprop.

Winning probability starts as a one-hot prior on a class output neuron
and is pushed down the recorded forward trace, layer by layer, until it
reaches the target layer:

* conv / dense / avgpool: child i of parent j gets
  ``P(j) * a_i * w+_ij / Z_j`` with ``w+ = max(w, 0)`` and
  ``Z_j = sum_i a_i * w+_ij``. Parents with ``Z_j <= EPS`` lose their
  mass to ``discarded_mass``. Biases receive nothing.
* relu, flatten: identity.
* maxpool: all mass goes to the recorded argmax child.
* add: split in proportion to ``max(a_branch, 0)``; discarded when both
  are non-positive.

Mass that flows into a branch which never passes through the target layer
(for instance a residual shortcut that skips it) cannot reach the target;
it is counted in ``discarded_mass`` as well and broken out separately in
``bypassed_mass``. With that accounting

    sum(unit_maps) + discarded_mass == 1

holds for every image.
"""

import struct
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import DataError, TargetLayerError

EPS = 1e-12


@dataclass
class ExcitationMaps:
    unit_maps: np.ndarray  # (K, h, w) float32
    discarded_mass: float
    target_layer: str
    class_index: int
    image_id: str = None
    bypassed_mass: float = 0.0

    @property
    def num_units(self):
        return self.unit_maps.shape[0]

    @property
    def height(self):
        return self.unit_maps.shape[1]

    @property
    def width(self):
        return self.unit_maps.shape[2]

    def total_mass(self):
        return float(self.unit_maps.sum(dtype=np.float64))


def aggregate_map(maps):
    """E_s: per-location sum over units, as a float64 (h, w) array."""
    um = maps.unit_maps if isinstance(maps, ExcitationMaps) else np.asarray(maps)
    return um.sum(axis=0, dtype=np.float64)


def _relevant_layers(graph, target):
    """Layers lying on some path from ``target`` to the output, target included."""
    names = graph.names
    if target not in names:
        raise TargetLayerError(f"unknown target layer {target!r}")
    if target == graph.output_layer:
        raise TargetLayerError(f"target layer {target!r} is the classifier head itself")
    below = {target}
    for spec in graph.layers:
        if any(src in below for src in spec.inputs):
            below.add(spec.name)
    above = {graph.output_layer}
    for spec in reversed(graph.layers):
        if spec.name in above:
            above.update(spec.inputs)
    if target not in above:
        raise TargetLayerError(f"target layer {target!r} is not on any path to the classifier head")
    return below & above


def _ratio(parent, z):
    """P/Z where Z > EPS, zero elsewhere; plus the per-image mass lost."""
    ok = z > EPS
    r = np.zeros_like(parent)
    np.divide(parent, z, out=r, where=ok)
    lost = np.where(ok, 0.0, parent).reshape(parent.shape[0], -1).sum(axis=1)
    return r, lost


def _backstep(model, spec, trace, parent):
    """Distribute a layer's mass over its inputs.

    Returns ([child mass per input], per-image discarded mass).
    """
    acts = trace.activations
    kind = spec.kind
    n = parent.shape[0]
    nothing = np.zeros(n)
    if kind in ("relu", "flatten"):
        child_shape = acts[spec.inputs[0]].shape
        return [parent.reshape(child_shape)], nothing
    a = acts[spec.inputs[0]].astype(np.float64)
    if kind == "dense":
        wp = np.maximum(model.param(spec, "weight").astype(np.float64), 0.0)
        r, lost = _ratio(parent, a @ wp.T)
        return [a * (r @ wp)], lost
    if kind == "conv":
        wp = np.maximum(model.param(spec, "weight").astype(np.float64), 0.0)
        s, p = int(spec.params.get("stride", 1)), int(spec.params.get("padding", 0))
        r, lost = _ratio(parent, T.conv2d_f64(a, wp, None, s, p))
        return [a * T.conv2d_transpose_f64(r, wp, a.shape, s, p)], lost
    if kind == "avgpool":
        k, s = int(spec.params["k"]), int(spec.params["s"])
        nb, c, h, w = a.shape
        flat = a.reshape(nb * c, 1, h, w)
        box = np.full((1, 1, k, k), 1.0 / (k * k))
        z = T.conv2d_f64(flat, box, None, s, 0)
        r, _ = _ratio(parent.reshape(z.shape), z)
        lost = np.where(z > EPS, 0.0, parent.reshape(z.shape)).reshape(nb, -1).sum(axis=1)
        child = flat * T.conv2d_transpose_f64(r, box, flat.shape, s, 0)
        return [child.reshape(a.shape)], lost
    if kind == "maxpool":
        idx = trace.argmax_indices[spec.name]
        nb, c, h, w = a.shape
        child = np.zeros((nb * c, h * w))
        np.add.at(child, (np.arange(nb * c)[:, None], idx.reshape(nb * c, -1)),
                  parent.reshape(nb * c, -1))
        return [child.reshape(a.shape)], nothing
    if kind == "add":
        a1 = np.maximum(a, 0.0)
        a2 = np.maximum(acts[spec.inputs[1]].astype(np.float64), 0.0)
        r, lost = _ratio(parent, a1 + a2)
        return [r * a1, r * a2], lost
    raise TargetLayerError(f"cannot propagate through {kind} layer {spec.name!r}")


def propagate(model, trace, class_indices, target_layer, history=None):
    """Batched backward pass.

    Returns (target mass shaped like the target activation, discarded per
    image, bypassed per image), all float64. If ``history`` is a list, one
    (layer name, per-image frontier total + discarded) entry is appended
    after each layer step.
    """
    g = model.graph
    relevant = _relevant_layers(g, target_layer)
    n = trace.batch_size
    class_indices = np.broadcast_to(np.asarray(class_indices, dtype=np.int64), (n,))
    if np.any(class_indices < 0) or np.any(class_indices >= g.num_classes):
        raise DataError(f"class index out of range [0, {g.num_classes}): {class_indices}")
    prior = np.zeros((n, g.num_classes))
    prior[np.arange(n), class_indices] = 1.0
    mass = {g.output_layer: prior}
    discarded = np.zeros(n)
    bypassed = np.zeros(n)
    for spec in reversed(g.layers):
        if spec.name == target_layer:
            break
        parent = mass.pop(spec.name, None)
        if parent is None:
            continue
        children, lost = _backstep(model, spec, trace, parent)
        discarded += lost
        for src, child in zip(spec.inputs, children):
            if src in relevant:
                if src in mass:
                    mass[src] = mass[src] + child
                else:
                    mass[src] = child
            else:
                bypassed += child.reshape(n, -1).sum(axis=1)
        if history is not None:
            frontier = sum(m.reshape(n, -1).sum(axis=1) for m in mass.values())
            history.append((spec.name, frontier + discarded + bypassed))
    target = mass.get(target_layer)
    if target is None:
        target = np.zeros(trace.activations[target_layer].shape)
    return target, discarded, bypassed


def _to_unit_maps(m):
    """(K, h, w) view of one image's target-layer mass."""
    if m.ndim == 3:
        return m
    return m.reshape(-1, 1, 1)


def excitation_backprop_batch(model, trace, class_indices, target_layer=None, image_ids=None):
    target_layer = target_layer or model.graph.target_layer_default
    target, discarded, bypassed = propagate(model, trace, class_indices, target_layer)
    n = trace.batch_size
    cls = np.broadcast_to(np.asarray(class_indices, dtype=np.int64), (n,))
    ids = image_ids if image_ids is not None else [None] * n
    out = []
    for i in range(n):
        out.append(ExcitationMaps(
            unit_maps=np.ascontiguousarray(_to_unit_maps(target[i]), dtype=np.float32),
            discarded_mass=float(discarded[i] + bypassed[i]),
            target_layer=target_layer, class_index=int(cls[i]), image_id=ids[i],
            bypassed_mass=float(bypassed[i])))
    return out


def excitation_backprop(model, trace, class_index, target_layer=None, image_id=None):
    """Excitation maps for a single-image trace."""
    if trace.batch_size != 1:
        raise DataError(f"expected a single-image trace, got batch of {trace.batch_size}")
    return excitation_backprop_batch(model, trace, [class_index], target_layer, [image_id])[0]


# map dump: one record per image
#   uint32 id length, id bytes (UTF-8), int32 class_index,
#   uint32 K, uint32 h, uint32 w, K*h*w float32 (all little-endian)

def write_map_record(f, maps):
    ident = (maps.image_id or "").encode("utf-8")
    f.write(struct.pack("<I", len(ident)))
    f.write(ident)
    f.write(struct.pack("<iIII", maps.class_index, maps.num_units, maps.height, maps.width))
    f.write(np.ascontiguousarray(maps.unit_maps, dtype="<f4").tobytes())


def write_map_dump(path, maps_list):
    with open(path, "wb") as f:
        for m in maps_list:
            write_map_record(f, m)


def read_map_dump(path, target_layer=None):
    """Yield ExcitationMaps records from a dump (discarded_mass is not stored: NaN)."""
    with open(path, "rb") as f:
        data = f.read()
    pos = 0
    while pos < len(data):
        try:
            (ln,) = struct.unpack_from("<I", data, pos)
            pos += 4
            ident = data[pos:pos + ln].decode("utf-8")
            pos += ln
            cls, k, h, w = struct.unpack_from("<iIII", data, pos)
            pos += 16
        except (struct.error, UnicodeDecodeError) as e:
            raise DataError(f"{path}: corrupt map record at byte {pos}: {e}") from None
        nbytes = 4 * k * h * w
        if pos + nbytes > len(data):
            raise DataError(f"{path}: truncated map record for {ident!r}")
        arr = np.frombuffer(data, dtype="<f4", count=k * h * w, offset=pos).reshape(k, h, w)
        pos += nbytes
        yield ExcitationMaps(arr.astype(np.float32), float("nan"), target_layer, cls, ident)
