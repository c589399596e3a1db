"""Batch driver behind the CLI subcommands.

Work is cut into fixed-size chunks of manifest entries, so the numbers a
run produces do not depend on how many workers process the chunks;
results are reassembled in manifest order before anything is written.
"""

import csv
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from importlib import resources

import numpy as np

from . import analysis, discriminability as disc
from .errors import ConfigError, DataError, EmptySetError
from .excitation import aggregate_map, excitation_backprop_batch, read_map_dump, write_map_record
from .ingest import bilinear_resize, load_annotations, load_image, load_manifest, preprocess, read_rgb8, write_ppm
from .metrics import THRESHOLD_MODE, MapStatistics, map_statistics, unit_max_scores
from .model import forward
from .modelfile import load_model

log = logging.getLogger(__name__)

CHUNK = 32
THREADS_ENV = "EXCITE_LENS_THREADS"

PREDICTIONS = "predictions.csv"
STATS = "stats.csv"
SCORES = "scores.csv"
MAPS = "maps.bin"
RANKINGS = "unit_rankings.csv"
SPECIALISTS = "specialists.csv"
TOP_EXAMPLES = "top_examples.json"
REPORT = "report.json"
SUMMARIES = "brand_summaries.csv"
CORRELATIONS = "correlations.csv"


@dataclass
class RunConfig:
    model: str = None
    manifest: str = None
    annotations: str = None
    target_layer: str = None
    bins: int = disc.DEFAULT_BINS
    alpha: float = disc.DEFAULT_ALPHA
    top_n: int = disc.DEFAULT_TOP_N
    top_m: int = 5
    out_dir: str = "out"
    seed: int = 0
    workers: int = 1
    group_by: str = "label"
    split: str = "test"

    def validate(self, need_model=True, need_manifest=True):
        for name, need in (("model", need_model), ("manifest", need_manifest)):
            path = getattr(self, name)
            if need and not path:
                raise ConfigError(f"--{name} is required")
            if need and not os.path.isfile(path):
                raise ConfigError(f"{name} file not found: {path}")
        if self.annotations and not os.path.isfile(self.annotations):
            raise ConfigError(f"annotations file not found: {self.annotations}")
        if self.bins < 2:
            raise ConfigError(f"bins must be >= 2, got {self.bins}")
        if self.top_n < 1:
            raise ConfigError(f"top_n must be >= 1, got {self.top_n}")
        if not self.alpha > 0:
            raise ConfigError(f"alpha must be positive, got {self.alpha}")
        if self.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {self.workers}")
        if self.group_by not in ("label", "predicted"):
            raise ConfigError(f"group_by must be 'label' or 'predicted', got {self.group_by!r}")
        return self

    def worker_count(self):
        cap = os.environ.get(THREADS_ENV)
        if cap:
            try:
                return max(1, min(self.workers, int(cap)))
            except ValueError:
                raise ConfigError(f"{THREADS_ENV} must be an integer, got {cap!r}") from None
        return self.workers


def fmt(x):
    return repr(float(x))


def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _read_csv(path):
    with open(path, newline="", encoding="utf-8") as f:
        return list(csv.DictReader(f))


@dataclass
class ImageResult:
    image_id: str
    predicted: object  # BrandId
    confidence: float
    maps: object = None
    stats: object = None
    scores: np.ndarray = None


def _process_chunk(model, manifest, entries, target_layer, attribute):
    x = np.stack([preprocess(load_image(manifest.resolve(e)), model.graph) for e in entries])
    trace = forward(model, x)
    cls = np.argmax(trace.posterior, axis=1)
    out = [ImageResult(e.image_id, model.graph.brand(c), float(trace.posterior[i, c]))
           for i, (e, c) in enumerate(zip(entries, cls))]
    if attribute:
        maps = excitation_backprop_batch(model, trace, cls, target_layer,
                                         [e.image_id for e in entries])
        for r, m in zip(out, maps):
            r.maps = m
            r.stats = map_statistics(m, r.predicted)
            r.scores = unit_max_scores(m)
    return out


def run_batch(model, manifest, cfg, attribute):
    entries = manifest.split(cfg.split)
    labels = set(model.graph.class_labels)
    for e in entries:
        if e.brand not in labels:
            raise DataError(f"manifest brand {e.brand!r} ({e.image_id}) is not a model class")
    chunks = [entries[i:i + CHUNK] for i in range(0, len(entries), CHUNK)]
    target = cfg.target_layer or model.graph.target_layer_default
    work = lambda ch: _process_chunk(model, manifest, ch, target, attribute)  # noqa: E731
    workers = cfg.worker_count()
    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(work, chunks))
    else:
        parts = [work(ch) for ch in chunks]
    return [r for part in parts for r in part]


def _load(cfg):
    model = load_model(cfg.model)
    manifest = load_manifest(cfg.manifest)
    if cfg.target_layer and cfg.target_layer not in model.graph.names:
        raise ConfigError(f"target layer {cfg.target_layer!r} is not in the model")
    return model, manifest


def cmd_predict(cfg):
    cfg.validate()
    model, manifest = _load(cfg)
    results = run_batch(model, manifest, cfg, attribute=False)
    os.makedirs(cfg.out_dir, exist_ok=True)
    path = os.path.join(cfg.out_dir, PREDICTIONS)
    _write_csv(path, ["image_id", "predicted", "confidence"],
               [[r.image_id, r.predicted.label, fmt(r.confidence)] for r in results])
    return path


def cmd_attribute(cfg):
    cfg.validate()
    model, manifest = _load(cfg)
    results = run_batch(model, manifest, cfg, attribute=True)
    os.makedirs(cfg.out_dir, exist_ok=True)
    with open(os.path.join(cfg.out_dir, MAPS), "wb") as f:
        for r in results:
            write_map_record(f, r.maps)
    _write_csv(os.path.join(cfg.out_dir, STATS),
               ["image_id", "predicted_brand", "strength", "extent", "threshold", "discarded_mass"],
               [[r.image_id, r.predicted.label, fmt(r.stats.strength), fmt(r.stats.extent),
                 fmt(r.stats.threshold), fmt(r.stats.discarded_mass)] for r in results])
    k = results[0].scores.size if results else 0
    brand = manifest.brand_of()
    _write_csv(os.path.join(cfg.out_dir, SCORES),
               ["image_id", "brand"] + [f"unit_{u}" for u in range(k)],
               [[r.image_id, brand[r.image_id]] + [fmt(v) for v in r.scores] for r in results])
    return results


def read_stats(path, graph):
    return [MapStatistics(image_id=row["image_id"],
                          brand_predicted=graph.brand_by_label(row["predicted_brand"]),
                          strength=float(row["strength"]), extent=float(row["extent"]),
                          threshold=float(row["threshold"]),
                          discarded_mass=float(row["discarded_mass"]))
            for row in _read_csv(path)]


def read_scores(path, graph):
    rows = _read_csv(path)
    if not rows:
        raise DataError(f"{path}: no scored images")
    units = [c for c in rows[0] if c.startswith("unit_")]
    return disc.ScoreMatrix(
        image_ids=[r["image_id"] for r in rows],
        brands=[graph.class_labels.index(r["brand"]) for r in rows],
        values=[[float(r[u]) for u in units] for r in rows])


def _ensure_attributed(cfg):
    if not os.path.isfile(os.path.join(cfg.out_dir, STATS)):
        cmd_attribute(cfg)


def unit_outputs(scores, graph, cfg):
    """Rankings, specialist counts and top examples as plain data."""
    rankings = disc.rank_all(scores, bins=cfg.bins, alpha=cfg.alpha)
    counts = disc.specialist_index(scores, top_n=cfg.top_n, rankings=rankings)
    m = min(cfg.top_m, len(scores.image_ids))
    tops = {str(u): disc.top_examples(scores, u, m) for u in range(scores.num_units)}
    return rankings, counts, tops


def write_unit_outputs(rankings, counts, tops, graph, out_dir):
    rows = []
    for b, ranked in rankings.items():
        rows += [[graph.class_labels[b], rank, e.unit, fmt(e.d_value)]
                 for rank, e in enumerate(ranked, start=1)]
    _write_csv(os.path.join(out_dir, RANKINGS), ["brand", "rank", "unit", "d_value"], rows)
    _write_csv(os.path.join(out_dir, SPECIALISTS), ["unit", "count"],
               [[u, c] for u, c in counts.items()])
    with open(os.path.join(out_dir, TOP_EXAMPLES), "w", encoding="utf-8") as f:
        json.dump(tops, f, indent=2)
        f.write("\n")


def cmd_units(cfg):
    cfg.validate()
    model = load_model(cfg.model)
    _ensure_attributed(cfg)
    scores = read_scores(os.path.join(cfg.out_dir, SCORES), model.graph)
    out = unit_outputs(scores, model.graph, cfg)
    write_unit_outputs(*out, model.graph, cfg.out_dir)
    return out


def _correlations(stats, ann, manifest):
    """Correlation section; undefined entries become None instead of failing."""
    try:
        return analysis.logo_correlation(stats, ann, manifest, strict=False)
    except EmptySetError as e:
        log.warning("no correlations: %s", e)
        return None


def cmd_report(cfg):
    cfg.validate()
    model, manifest = _load(cfg)
    graph = model.graph
    _ensure_attributed(cfg)
    stats = read_stats(os.path.join(cfg.out_dir, STATS), graph)
    scores = read_scores(os.path.join(cfg.out_dir, SCORES), graph)
    summaries, omitted = analysis.brand_summaries(stats, manifest, graph, cfg.split, cfg.group_by)
    rankings, counts, tops = unit_outputs(scores, graph, cfg)
    write_unit_outputs(rankings, counts, tops, graph, cfg.out_dir)

    corr = None
    if cfg.annotations:
        ann = load_annotations(cfg.annotations, manifest)
        corr = _correlations(stats, ann, manifest)
    report = {
        "metadata": {
            "model": os.path.basename(cfg.model),
            "target_layer": cfg.target_layer or graph.target_layer_default,
            "split": cfg.split,
            "n_images": len(stats),
            "threshold_mode": THRESHOLD_MODE,
            "group_encoding": analysis.GROUP_ENCODING,
            "summary_grouping": cfg.group_by,
            "bins": cfg.bins,
            "alpha": cfg.alpha,
            "top_n": cfg.top_n,
        },
        "brand_summaries": [
            {"brand": s.brand.label, "brand_index": s.brand.index, "n_images": s.n_images,
             "median_strength": s.median_strength, "median_extent": s.median_extent,
             "strength_decile": s.strength_decile, "extent_decile": s.extent_decile}
            for s in summaries],
        "omitted_brands": omitted,
        "correlations": corr.correlations if corr else {},
        "group_accuracy": corr.group_accuracy if corr else {},
        "prevalence": corr.prevalence if corr else {},
        "units": {
            "specialist_counts": {str(u): c for u, c in counts.items()},
            "top_units": {graph.class_labels[b]: [{"unit": e.unit, "d_value": e.d_value}
                                                  for e in ranked[:cfg.top_n]]
                          for b, ranked in rankings.items()},
        },
    }
    with open(os.path.join(cfg.out_dir, REPORT), "w", encoding="utf-8") as f:
        json.dump(report, f, indent=2)
        f.write("\n")
    _write_csv(os.path.join(cfg.out_dir, SUMMARIES),
               ["brand", "n_images", "median_strength", "median_extent",
                "strength_decile", "extent_decile"],
               [[s.brand.label, s.n_images, fmt(s.median_strength), fmt(s.median_extent),
                 s.strength_decile, s.extent_decile] for s in summaries])
    if corr:
        _write_csv(os.path.join(cfg.out_dir, CORRELATIONS), ["metric", "group", "r"],
                   [[m, g, "" if r is None else fmt(r)]
                    for m, by_group in corr.correlations.items() for g, r in by_group.items()])
    return report


def report_schema():
    return json.loads(resources.files("excite_lens").joinpath("schemas/report.schema.json")
                      .read_text(encoding="utf-8"))


# --- heatmaps ---

def heatmap_values(agg, height, width):
    """Bilinear upsample to (height, width), then min-max to [0, 1].

    Display only; a constant map gives all zeros.
    """
    up = bilinear_resize(np.asarray(agg, dtype=np.float64), height, width)
    lo, hi = up.min(), up.max()
    if hi <= lo:
        return np.zeros_like(up)
    return (up - lo) / (hi - lo)


def _hot(v):
    return np.stack([np.clip(3 * v, 0, 1), np.clip(3 * v - 1, 0, 1), np.clip(3 * v - 2, 0, 1)], axis=-1)


def _save(path, arr):
    if path.lower().endswith(".png"):
        from PIL import Image
        Image.fromarray(arr).save(path)
    else:
        write_ppm(path, arr)


def render_heatmap(agg, image, out_path, overlay_path=None):
    """Write the grayscale heatmap (and optionally a 50/50 overlay on ``image``).

    ``image`` is uint8 (H, W, 3). Returns the [0, 1] heatmap array.
    """
    image = np.asarray(image, dtype=np.uint8)
    h, w = image.shape[:2]
    heat = heatmap_values(agg, h, w)
    _save(out_path, np.round(heat * 255).astype(np.uint8))
    if overlay_path:
        blend = 0.5 * image.astype(np.float64) + 0.5 * 255 * _hot(heat)
        _save(overlay_path, np.round(blend).astype(np.uint8))
    return heat


def cmd_heatmap(cfg, image_id, overlay=True):
    cfg.validate()
    manifest = load_manifest(cfg.manifest)
    entry = next((e for e in manifest if e.image_id == image_id), None)
    if entry is None:
        raise DataError(f"image id {image_id!r} not in manifest")
    dump = os.path.join(cfg.out_dir, MAPS)
    if not os.path.isfile(dump):
        cmd_attribute(cfg)
    rec = next((m for m in read_map_dump(dump) if m.image_id == image_id), None)
    if rec is None:
        raise DataError(f"no excitation map for {image_id!r} in {dump} (is it in the {cfg.split} split?)")
    os.makedirs(os.path.join(cfg.out_dir, "heatmaps"), exist_ok=True)
    base = os.path.join(cfg.out_dir, "heatmaps", image_id)
    render_heatmap(aggregate_map(rec), read_rgb8(manifest.resolve(entry)), base + "_heat.pgm",
                   base + "_overlay.ppm" if overlay else None)
    return base

