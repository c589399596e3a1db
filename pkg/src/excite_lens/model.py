"""Layer graph, forward pass with recorded activations, and argmax prediction."""

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import DanglingWeightRefError, GraphError, ShapeError

LAYER_KINDS = ("input", "conv", "relu", "maxpool", "avgpool", "dense", "add", "flatten")
LINEAR_KINDS = ("conv", "dense", "avgpool")


@dataclass(frozen=True)
class LayerSpec:
    name: str
    kind: str
    inputs: tuple = ()
    params: dict = field(default_factory=dict)
    weight_ref: str = None

    def to_json(self):
        d = {"name": self.name, "kind": self.kind, "inputs": list(self.inputs)}
        if self.params:
            d["params"] = dict(self.params)
        if self.weight_ref is not None:
            d["weight_ref"] = self.weight_ref
        return d

    @classmethod
    def from_json(cls, d):
        return cls(name=d["name"], kind=d["kind"], inputs=tuple(d.get("inputs", ())),
                   params=dict(d.get("params", {})), weight_ref=d.get("weight_ref"))


@dataclass(frozen=True)
class BrandId:
    index: int
    label: str


@dataclass
class ModelGraph:
    layers: list
    num_classes: int
    input_shape: tuple  # (C, H, W)
    target_layer_default: str
    mean: tuple
    std: tuple
    class_labels: list = None

    def __post_init__(self):
        self.input_shape = tuple(int(v) for v in self.input_shape)
        self.mean = tuple(float(v) for v in self.mean)
        self.std = tuple(float(v) for v in self.std)
        if self.class_labels is None:
            self.class_labels = [f"class_{i}" for i in range(self.num_classes)]
        self.class_labels = list(self.class_labels)

    def layer(self, name):
        for spec in self.layers:
            if spec.name == name:
                return spec
        raise KeyError(name)

    @property
    def names(self):
        return [spec.name for spec in self.layers]

    @property
    def output_layer(self):
        return self.layers[-1].name

    def consumers(self):
        """Map layer name -> names of layers that read its output."""
        out = {spec.name: [] for spec in self.layers}
        for spec in self.layers:
            for src in spec.inputs:
                out[src].append(spec.name)
        return out

    def brand(self, index):
        return BrandId(int(index), self.class_labels[int(index)])

    def brand_by_label(self, label):
        return BrandId(self.class_labels.index(label), label)


@dataclass
class Model:
    graph: ModelGraph
    weights: dict  # tensor name -> float32 array

    def param(self, spec, suffix):
        return self.weights[f"{spec.weight_ref}.{suffix}"]


@dataclass
class ForwardTrace:
    activations: dict  # layer name -> float32 array with leading batch axis
    argmax_indices: dict  # maxpool layer name -> int64 flat indices
    logits: np.ndarray  # (N, num_classes)
    posterior: np.ndarray  # (N, num_classes), float64
    class_labels: list = None

    @property
    def batch_size(self):
        return self.logits.shape[0]

    def select(self, i):
        """Trace for image ``i`` alone (views, no copies)."""
        sl = slice(i, i + 1)
        return ForwardTrace({k: v[sl] for k, v in self.activations.items()},
                            {k: v[sl] for k, v in self.argmax_indices.items()},
                            self.logits[sl], self.posterior[sl], self.class_labels)


def _required_tensors(spec):
    if spec.kind in ("conv", "dense"):
        return ("weight", "bias")
    return ()


def infer_shapes(graph, weights):
    """Per-layer output shapes (without batch axis); validates the graph on the way.

    Raises GraphError for anything structurally wrong and
    DanglingWeightRefError when a layer references a missing tensor.
    """
    shapes = {}
    if not graph.layers:
        raise GraphError("graph has no layers")
    for pos, spec in enumerate(graph.layers):
        if spec.kind not in LAYER_KINDS:
            raise GraphError(f"layer {spec.name!r}: unknown kind {spec.kind!r}")
        if spec.name in shapes:
            raise GraphError(f"duplicate layer name {spec.name!r}")
        for src in spec.inputs:
            if src not in shapes:
                raise GraphError(
                    f"layer {spec.name!r} reads {src!r}, which is not an earlier layer "
                    "(graph must be a topologically ordered DAG)")
        want = {"input": 0, "add": 2}.get(spec.kind, 1)
        if len(spec.inputs) != want:
            raise GraphError(f"layer {spec.name!r} ({spec.kind}) needs {want} inputs, has {len(spec.inputs)}")
        if spec.kind == "input" and pos != 0:
            raise GraphError("the input layer must come first")
        for suffix in _required_tensors(spec):
            key = f"{spec.weight_ref}.{suffix}"
            if spec.weight_ref is None or key not in weights:
                raise DanglingWeightRefError(f"layer {spec.name!r}: missing tensor {key!r}")

        src = shapes[spec.inputs[0]] if spec.inputs else None
        p = spec.params
        if spec.kind == "input":
            shape = graph.input_shape
        elif spec.kind in ("relu",):
            shape = src
        elif spec.kind == "flatten":
            shape = (int(np.prod(src)),)
        elif spec.kind == "add":
            other = shapes[spec.inputs[1]]
            if src != other:
                raise GraphError(f"add {spec.name!r}: input shapes differ, {src} vs {other}")
            shape = src
        elif spec.kind == "conv":
            w = weights[f"{spec.weight_ref}.weight"]
            b = weights[f"{spec.weight_ref}.bias"]
            if len(src) != 3 or w.ndim != 4 or w.shape[1] != src[0] or b.shape != (w.shape[0],):
                raise GraphError(f"conv {spec.name!r}: input {src} vs weights {w.shape}, bias {b.shape}")
            s, pad = int(p.get("stride", 1)), int(p.get("padding", 0))
            shape = (w.shape[0], T._out_size(src[1], w.shape[2], s, pad),
                     T._out_size(src[2], w.shape[3], s, pad))
        elif spec.kind in ("maxpool", "avgpool"):
            k, s = int(p["k"]), int(p["s"])
            if len(src) != 3 or k > src[1] or k > src[2]:
                raise GraphError(f"{spec.kind} {spec.name!r}: window {k} does not fit input {src}")
            shape = (src[0], T._out_size(src[1], k, s, 0), T._out_size(src[2], k, s, 0))
        elif spec.kind == "dense":
            w = weights[f"{spec.weight_ref}.weight"]
            b = weights[f"{spec.weight_ref}.bias"]
            if len(src) != 1 or w.ndim != 2 or w.shape[1] != src[0] or b.shape != (w.shape[0],):
                raise GraphError(f"dense {spec.name!r}: input {src} vs weights {w.shape}, bias {b.shape}")
            shape = (w.shape[0],)
        if any(d < 1 for d in shape):
            raise GraphError(f"layer {spec.name!r} has empty output shape {shape}")
        shapes[spec.name] = tuple(int(d) for d in shape)

    last = graph.layers[-1]
    if last.kind != "dense":
        raise GraphError(f"final layer {last.name!r} must be dense, is {last.kind}")
    if shapes[last.name] != (graph.num_classes,):
        raise GraphError(f"num_classes={graph.num_classes} but head outputs {shapes[last.name]}")
    if len(graph.class_labels) != graph.num_classes or len(set(graph.class_labels)) != graph.num_classes:
        raise GraphError("class labels must be unique and one per class")
    tgt = graph.target_layer_default
    if tgt not in shapes:
        raise GraphError(f"target_layer_default {tgt!r} is not a layer")
    if graph.layer(tgt).kind not in ("conv", "relu") or len(shapes[tgt]) != 3:
        raise GraphError(f"target_layer_default {tgt!r} must be a 4-D conv or relu layer")
    if len(graph.mean) != graph.input_shape[0] or len(graph.std) != graph.input_shape[0]:
        raise GraphError("preprocess mean/std must have one entry per input channel")
    if any(s <= 0 for s in graph.std):
        raise GraphError("preprocess std must be positive")
    return shapes


def forward(model, image):
    """Run the graph on preprocessed image(s), recording every activation.

    ``image`` is (C, H, W) or (N, C, H, W) and must match the graph's
    input shape.
    """
    g = model.graph
    x = np.asarray(image)
    if x.ndim == 3:
        x = x[None]
    if x.ndim != 4 or tuple(x.shape[1:]) != g.input_shape:
        raise ShapeError(f"image shape {tuple(np.shape(image))} does not match model input {g.input_shape}")
    acts, argmax = {}, {}
    for spec in g.layers:
        ins = [acts[name] for name in spec.inputs]
        p = spec.params
        kind = spec.kind
        if kind == "input":
            out = T.as_tensor(x)
        elif kind == "conv":
            out = T.conv2d(ins[0], model.param(spec, "weight"), model.param(spec, "bias"),
                           stride=int(p.get("stride", 1)), padding=int(p.get("padding", 0)))
        elif kind == "relu":
            out = T.relu(ins[0])
        elif kind == "maxpool":
            out, argmax[spec.name] = T.maxpool2d(ins[0], int(p["k"]), int(p["s"]))
        elif kind == "avgpool":
            out = T.avgpool2d(ins[0], int(p["k"]), int(p["s"]))
        elif kind == "dense":
            out = T.dense(ins[0], model.param(spec, "weight"), model.param(spec, "bias"))
        elif kind == "add":
            out = T.add(ins[0], ins[1])
        elif kind == "flatten":
            out = T.flatten(ins[0])
        acts[spec.name] = out
    logits = acts[g.output_layer]
    return ForwardTrace(acts, argmax, logits, T.softmax(logits), g.class_labels)


def predict(trace, i=0):
    """Brand with the maximum posterior for image ``i``; ties go to the lowest index."""
    post = np.asarray(trace.posterior)
    row = post[i] if post.ndim == 2 else post
    k = int(np.argmax(row))
    labels = trace.class_labels
    return BrandId(k, labels[k] if labels is not None else str(k))
