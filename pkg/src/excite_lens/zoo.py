"""Reference architectures."""

import numpy as np

from .model import LayerSpec, Model, ModelGraph, infer_shapes

MINIRES_TARGET = "blk2.relu2"


def _conv(name, src, ref, stride=1, padding=0):
    return LayerSpec(name, "conv", (src,), {"stride": stride, "padding": padding}, ref)


def minires_layers():
    L = LayerSpec
    return [
        L("input", "input"),
        _conv("stem.conv", "input", "stem.conv", stride=2, padding=1),
        L("stem.relu", "relu", ("stem.conv",)),
        L("stem.pool", "maxpool", ("stem.relu",), {"k": 2, "s": 2}),
        _conv("blk1.conv1", "stem.pool", "blk1.conv1", padding=1),
        L("blk1.relu1", "relu", ("blk1.conv1",)),
        _conv("blk1.conv2", "blk1.relu1", "blk1.conv2", padding=1),
        L("blk1.relu2", "relu", ("blk1.conv2",)),
        L("blk1.add", "add", ("stem.pool", "blk1.relu2")),
        _conv("blk2.conv1", "blk1.add", "blk2.conv1", stride=2, padding=1),
        L("blk2.relu1", "relu", ("blk2.conv1",)),
        _conv("blk2.conv2", "blk2.relu1", "blk2.conv2", padding=1),
        L("blk2.relu2", "relu", ("blk2.conv2",)),
        _conv("blk2.proj", "blk1.add", "blk2.proj", stride=2),
        L("blk2.proj_relu", "relu", ("blk2.proj",)),
        L("blk2.add", "add", ("blk2.proj_relu", "blk2.relu2")),
        L("head.pool", "avgpool", ("blk2.add",), {"k": 8, "s": 8}),
        L("head.flatten", "flatten", ("head.pool",)),
        L("head.fc", "dense", ("head.flatten",), weight_ref="head.fc"),
    ]


def build_minires(num_classes, seed=0, class_labels=None):
    """Small residual classifier for 3x64x64 inputs.

    conv/relu/maxpool stem, two residual blocks (both add inputs are
    non-negative), global average pool, dense head. The target layer
    ``blk2.relu2`` is (32, 8, 8). Weights are He-normal from ``seed``.
    """
    rng = np.random.default_rng(seed)
    shapes = {
        "stem.conv": (16, 3, 3, 3),
        "blk1.conv1": (16, 16, 3, 3),
        "blk1.conv2": (16, 16, 3, 3),
        "blk2.conv1": (32, 16, 3, 3),
        "blk2.conv2": (32, 32, 3, 3),
        "blk2.proj": (32, 16, 1, 1),
        "head.fc": (num_classes, 32),
    }
    weights = {}
    for ref, shape in shapes.items():
        fan_in = int(np.prod(shape[1:]))
        w = rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)
        weights[f"{ref}.weight"] = w.astype(np.float32)
        weights[f"{ref}.bias"] = (0.01 * rng.standard_normal(shape[0])).astype(np.float32)
    graph = ModelGraph(layers=minires_layers(), num_classes=num_classes,
                       input_shape=(3, 64, 64), target_layer_default=MINIRES_TARGET,
                       mean=(0.5, 0.5, 0.5), std=(0.25, 0.25, 0.25),
                       class_labels=class_labels)
    infer_shapes(graph, weights)
    return Model(graph, weights)
