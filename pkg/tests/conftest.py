import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from excite_lens.discriminability import ScoreMatrix  # noqa: E402
from excite_lens.model import LayerSpec, Model, ModelGraph, infer_shapes  # noqa: E402
from excite_lens.zoo import build_minires  # noqa: E402


def toy_net(rng, variant=None):
    """Random small sequential net (<= 3 linear layers, <= 64 neurons per
    layer, mixed-sign weights). Returns (model, target layer name)."""
    variant = rng.integers(0, 4) if variant is None else variant
    L = LayerSpec
    weights = {}

    def lin(name, shape):
        weights[f"{name}.weight"] = rng.standard_normal(shape).astype(np.float32)
        weights[f"{name}.bias"] = (0.1 * rng.standard_normal(shape[0])).astype(np.float32)

    classes = int(rng.integers(2, 5))
    if variant == 0:  # conv -> relu -> flatten -> dense, target = input
        c, h = int(rng.integers(1, 3)), int(rng.integers(3, 5))
        cout, k = int(rng.integers(1, 3)), int(rng.integers(2, 4))
        s, p = int(rng.integers(1, 3)), int(rng.integers(0, 2))
        lin("c1", (cout, c, k, k))
        ho = (h + 2 * p - k) // s + 1
        lin("fc", (classes, cout * ho * ho))
        layers = [L("input", "input"),
                  L("c1", "conv", ("input",), {"stride": s, "padding": p}, "c1"),
                  L("r1", "relu", ("c1",)), L("flat", "flatten", ("r1",)),
                  L("fc", "dense", ("flat",), weight_ref="fc")]
        shape, target, default = (c, h, h), "input", "r1"
    elif variant == 1:  # conv -> relu -> conv -> relu -> flatten -> dense, target = r1
        c, h = int(rng.integers(1, 3)), 4
        c1, c2 = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        lin("c1", (c1, c, 2, 2))
        lin("c2", (c2, c1, 2, 2))
        lin("fc", (classes, c2 * 2 * 2))
        layers = [L("input", "input"),
                  L("c1", "conv", ("input",), {"stride": 1, "padding": 0}, "c1"),
                  L("r1", "relu", ("c1",)),
                  L("c2", "conv", ("r1",), {"stride": 1, "padding": 0}, "c2"),
                  L("r2", "relu", ("c2",)), L("flat", "flatten", ("r2",)),
                  L("fc", "dense", ("flat",), weight_ref="fc")]
        shape, target, default = (c, h, h), "r1", "r1"
    elif variant == 2:  # conv -> relu -> maxpool -> avgpool -> flatten -> dense
        c = int(rng.integers(1, 3))
        c1 = int(rng.integers(1, 4))
        lin("c1", (c1, c, 3, 3))
        lin("fc", (classes, c1 * 2 * 2))
        layers = [L("input", "input"),
                  L("c1", "conv", ("input",), {"stride": 1, "padding": 1}, "c1"),
                  L("r1", "relu", ("c1",)),
                  L("mp", "maxpool", ("r1",), {"k": 2, "s": 1}),
                  L("ap", "avgpool", ("mp",), {"k": 2, "s": 2}),
                  L("flat", "flatten", ("ap",)),
                  L("fc", "dense", ("flat",), weight_ref="fc")]
        shape, target, default = (c, 5, 5), "input", "r1"
    else:  # relu -> flatten -> dense -> relu -> dense -> relu -> dense
        n_in = int(rng.integers(4, 17))
        h1, h2 = int(rng.integers(3, 13)), int(rng.integers(3, 13))
        lin("d1", (h1, n_in))
        lin("d2", (h2, h1))
        lin("fc", (classes, h2))
        layers = [L("input", "input"), L("r0", "relu", ("input",)),
                  L("flat", "flatten", ("r0",)),
                  L("d1", "dense", ("flat",), weight_ref="d1"), L("dr1", "relu", ("d1",)),
                  L("d2", "dense", ("dr1",), weight_ref="d2"), L("dr2", "relu", ("d2",)),
                  L("fc", "dense", ("dr2",), weight_ref="fc")]
        shape, target, default = (n_in, 1, 1), "flat", "r0"
    graph = ModelGraph(layers=layers, num_classes=classes, input_shape=shape,
                       target_layer_default=default, mean=(0.0,) * shape[0],
                       std=(1.0,) * shape[0])
    infer_shapes(graph, weights)
    return Model(graph, weights), target


def separating_fixture(n_per_brand=24, brands=12):
    """Unit 7 fires iff the image is brand 0, and unit 7 + b fires iff the
    image is brand b >= 1. Units 0..6 and the last unit draw from a few
    shared discrete levels regardless of brand."""
    units = brands + 8
    labels = np.repeat(np.arange(brands), n_per_brand)
    levels = np.array([0.2, 0.5, 0.8, 1.0])
    vals = np.empty((labels.size, units))
    for k in range(units):
        vals[:, k] = np.tile(levels, labels.size // levels.size)
    for b in range(brands):
        vals[:, 7 + b] = np.where(labels == b, 1.0, 0.0)
    return ScoreMatrix([f"im{i}" for i in range(labels.size)], labels, vals)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def minires():
    return build_minires(5, seed=7)


@pytest.fixture(scope="session")
def minires_batch():
    """MiniRes plus 8 random standardized images."""
    x = np.random.default_rng(99).uniform(-2, 2, size=(8, 3, 64, 64)).astype(np.float32)
    return build_minires(5, seed=7), x


# --- acceptance summary: one line per criterion after the run ---

ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance_line():
    def record(number, name, ok, detail=""):
        ACCEPTANCE_LINES.append((number, f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {name}"
                                 + (f" ({detail})" if detail else "")))
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
