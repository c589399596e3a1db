"""Acceptance gate. Each test records one pass/fail line, printed in the
``acceptance`` section of the pytest summary."""

import json
import math
import os
import time

import numpy as np
import pytest

from conftest import separating_fixture, toy_net
from excite_lens import cli, pipeline
from excite_lens.discriminability import rank_units, specialist_index, symmetric_kl
from excite_lens.excitation import excitation_backprop, excitation_backprop_batch
from excite_lens.metrics import extent, map_statistics, strength
from excite_lens.model import forward
from excite_lens.zoo import build_minires
from oracles import path_enumeration


def _minires_pass(n, seed):
    """Forward + excitation + metrics for ``n`` random images, in batches."""
    model = build_minires(10, seed=seed)
    rng = np.random.default_rng(seed)
    worst, min_val, stats = 0.0, np.inf, []
    for start in range(0, n, 50):
        x = rng.uniform(-2, 2, size=(min(50, n - start), 3, 64, 64)).astype(np.float32)
        tr = forward(model, x)
        cls = np.argmax(tr.posterior, axis=1)
        for m in excitation_backprop_batch(model, tr, cls):
            total = float(m.unit_maps.sum(dtype=np.float64)) + m.discarded_mass
            worst = max(worst, abs(total - 1.0))
            min_val = min(min_val, float(m.unit_maps.min()))
            stats.append(map_statistics(m))
    return worst, min_val, stats


def test_1_conservation(acceptance_line):
    t0 = time.perf_counter()
    worst, min_val, stats = _minires_pass(200, seed=1)
    dt = time.perf_counter() - t0
    ok = worst <= 1e-5 and min_val >= 0 and len(stats) == 200 and dt < 30
    acceptance_line(1, "conservation on 200 MiniRes images", ok,
                    f"max |sum+discarded-1| = {worst:.2e}, min map value = {min_val:.1e}, {dt:.2f} s")
    assert ok


def test_2_path_oracle(acceptance_line):
    rng = np.random.default_rng(2024)
    worst, nets = 0.0, 0
    for i in range(24):
        model, target = toy_net(rng, variant=i % 4)
        x = rng.uniform(-1, 2, size=model.graph.input_shape).astype(np.float32)
        tr = forward(model, x)
        for cls in range(model.graph.num_classes):
            marg, lost = path_enumeration(model, tr, cls, target)
            em = excitation_backprop(model, tr, cls, target)
            worst = max(worst, float(np.max(np.abs(em.unit_maps.ravel().astype(np.float64) - marg))),
                        abs(em.discarded_mass - lost))
        nets += 1
    ok = nets >= 20 and worst <= 1e-6
    acceptance_line(2, "path-enumeration equivalence", ok, f"{nets} toy nets, max error {worst:.2e}")
    assert ok


def test_3_metric_identities(acceptance_line):
    agg = np.array([[0.3, 0.1], [0, 0]])
    one_hot = np.zeros((4, 4))
    one_hot[0, 3] = 1.0
    rng = np.random.default_rng(3)
    maps = rng.uniform(size=(6, 5, 5))
    checks = {
        "strength example": strength(agg) == 0.3,
        "extent example": extent(agg) == (0.25, 0.1),
        "constant extent": extent(np.full((3, 3), 0.2))[0] == 0,
        "one-hot extent": extent(one_hot)[0] == 0.0625,
        "strength is max of aggregate": strength(maps) == float(maps.sum(axis=0).max()),
    }
    ok = all(checks.values())
    acceptance_line(3, "metric identities", ok,
                    ", ".join(k for k, v in checks.items() if not v) or "all exact")
    assert ok


def _run(argv):
    assert cli.main(argv) == 0, argv


def _pipeline(root, workers, seed=0, n=300):
    data, out = root / "data", root / "out"
    _run(["synth", "--out-dir", str(data), "--n-per-brand", str(n), "--seed", str(seed)])
    flags = ["--model", str(data / "model.ebn"), "--manifest", str(data / "manifest.csv"),
             "--annotations", str(data / "annotations.csv"), "--out-dir", str(out),
             "--workers", str(workers)]
    for cmd in ("predict", "attribute", "report"):
        _run([cmd] + flags)
    return data, out


def test_4_synthetic_sign_structure(tmp_path, acceptance_line):
    _, out = _pipeline(tmp_path, workers=1)
    rep = json.loads((out / "report.json").read_text())
    r = rep["correlations"]
    med = {s["brand"]: s for s in rep["brand_summaries"]}
    checks = {
        "r(strength, logo) > 0": r["strength"]["logo"] > 0,
        "r(strength, no_logo) < 0": r["strength"]["no_logo"] < 0,
        "r(extent, logo) < 0": r["extent"]["logo"] < 0,
        "r(extent, no_logo) > 0": r["extent"]["no_logo"] > 0,
        "r(extent, repeated_logo) > 0": r["extent"]["repeated_logo"] > 0,
        "median extent repeated > logo":
            med["monogrammo"]["median_extent"] > med["markly"]["median_extent"],
        "median strength logo > no_logo":
            med["markly"]["median_strength"] > med["weaveworks"]["median_strength"],
    }
    ok = all(checks.values()) and rep["metadata"]["n_images"] == 900
    detail = "; ".join(f"{m}/{g} {v:+.3f}" for m, by in r.items() for g, v in by.items())
    acceptance_line(4, "synthetic sign reproduction (3 x 300)", ok, detail)
    assert ok, {k: v for k, v in checks.items() if not v}


def test_5_discriminability_fixture(acceptance_line):
    scores = separating_fixture()
    ranked = rank_units(scores, 0)
    counts = specialist_index(scores, top_n=1)
    kl = symmetric_kl([0.8, 0.2], [0.2, 0.8])
    ratio = ranked[0].d_value / ranked[1].d_value if ranked[1].d_value > 0 else math.inf
    ok = (ranked[0].unit == 7 and ratio >= 10 and counts[7] == 1
          and abs(kl - 1.66355) <= 1e-4)
    acceptance_line(5, "discriminability fixture", ok,
                    f"top unit {ranked[0].unit}, d ratio {ratio:.1f}, specialist count {counts[7]}, "
                    f"KL {kl:.5f}")
    assert ok


def _tree(root):
    files = {}
    for base, _, names in os.walk(root):
        for name in names:
            p = os.path.join(base, name)
            files[os.path.relpath(p, root)] = open(p, "rb").read()
    return files


def test_6_determinism(tmp_path, monkeypatch, acceptance_line):
    monkeypatch.delenv(pipeline.THREADS_ENV, raising=False)
    runs = []
    for i, workers in enumerate([1, 1, 4]):
        root = tmp_path / f"run{i}"
        _pipeline(root, workers=workers, seed=11, n=60)
        runs.append(_tree(root))
    ok = runs[0] == runs[1] == runs[2] and len(runs[0]) > 180
    acceptance_line(6, "byte-identical reruns (workers 1, 1, 4)", ok,
                    f"{len(runs[0])} files compared per run")
    assert ok


@pytest.mark.slow
def test_7_throughput(acceptance_line):
    t0 = time.perf_counter()
    worst, _, stats = _minires_pass(1000, seed=7)
    dt = time.perf_counter() - t0
    ok = dt < 60 and len(stats) == 1000 and worst <= 1e-5
    acceptance_line(7, "throughput on 1000 MiniRes images", ok,
                    f"{dt:.2f} s single process, {1000 / dt:.0f} images/s")
    assert ok
