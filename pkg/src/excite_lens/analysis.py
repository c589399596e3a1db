"""Brand-level aggregation and correlation with human logo-visibility labels."""

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptySetError, UndefinedCorrelationError
from .ingest import GROUPS

log = logging.getLogger(__name__)

# one indicator vector per group, correlated against each metric
GROUP_ENCODING = "one_vs_rest"


@dataclass
class BrandSummary:
    brand: object  # BrandId
    n_images: int
    median_strength: float
    median_extent: float
    strength_decile: int = 0
    extent_decile: int = 0


@dataclass
class CorrelationReport:
    correlations: dict  # metric -> group -> r
    group_accuracy: dict = field(default_factory=dict)
    prevalence: dict = field(default_factory=dict)
    n_images: int = 0
    encoding: str = GROUP_ENCODING


def median(values):
    v = sorted(values)
    n = len(v)
    if n == 0:
        raise EmptySetError("median of an empty sequence")
    mid = n // 2
    return float(v[mid]) if n % 2 else (v[mid - 1] + v[mid]) / 2.0


def decile_sizes(n):
    """Split n ranks into 10 contiguous groups, extra ranks to lower deciles."""
    base, extra = divmod(n, 10)
    return [base + (1 if d < extra else 0) for d in range(10)]


def assign_deciles(values):
    """Decile 1..10 per entry by ascending rank (ties: earlier entry ranks lower)."""
    order = sorted(range(len(values)), key=lambda i: (values[i], i))
    out = [0] * len(values)
    pos = 0
    for d, size in enumerate(decile_sizes(len(values)), start=1):
        for i in order[pos:pos + size]:
            out[i] = d
        pos += size
    return out


def brand_summaries(stats, manifest, graph, split="test", by="label"):
    """Median strength/extent per brand over ``split`` images.

    ``by="label"`` groups images by manifest brand; ``by="predicted"``
    groups by the classifier's prediction. Returns (summaries in brand
    index order, list of omitted brand labels).
    """
    in_split = {e.image_id: e.brand for e in manifest if e.split == split}
    per_brand = {i: [] for i in range(graph.num_classes)}
    for s in stats:
        if s.image_id not in in_split:
            continue
        if by == "label":
            b = graph.class_labels.index(in_split[s.image_id])
        elif by == "predicted":
            b = s.brand_predicted.index
        else:
            raise ValueError(f"unknown grouping {by!r}")
        per_brand[b].append(s)
    summaries, omitted = [], []
    for b, rows in per_brand.items():
        if not rows:
            label = graph.class_labels[b]
            log.warning("brand %s has no %s images; omitted from summaries", label, split)
            omitted.append(label)
            continue
        summaries.append(BrandSummary(graph.brand(b), len(rows),
                                      median([r.strength for r in rows]),
                                      median([r.extent for r in rows])))
    for s, d in zip(summaries, assign_deciles([s.median_strength for s in summaries])):
        s.strength_decile = d
    for s, d in zip(summaries, assign_deciles([s.median_extent for s in summaries])):
        s.extent_decile = d
    return summaries, omitted


def pearson(x, y):
    """Sample Pearson correlation, clamped to [-1, 1].

    Raises UndefinedCorrelationError when fewer than two pairs are given
    or either vector is constant.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError(f"pearson needs equal-length vectors, got {x.shape} and {y.shape}")
    if x.size < 2:
        raise UndefinedCorrelationError("undefined correlation: fewer than 2 pairs")
    dx, dy = x - x.mean(), y - y.mean()
    sxx, syy = math.fsum(dx * dx), math.fsum(dy * dy)
    if sxx == 0 or syy == 0:
        raise UndefinedCorrelationError("undefined correlation: constant input")
    r = math.fsum(dx * dy) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


def group_accuracy(predictions, manifest, ann, graph=None):
    """Fraction of each group's images whose predicted brand is the manifest brand.

    ``predictions`` maps image_id to a BrandId (or label string). Groups
    with no images map to None.
    """
    truth = manifest.brand_of()
    hits = {g: 0 for g in GROUPS}
    totals = {g: 0 for g in GROUPS}
    for image_id, g in ann.groups.items():
        if image_id not in predictions or image_id not in truth:
            continue
        p = predictions[image_id]
        label = getattr(p, "label", p)
        totals[g] += 1
        hits[g] += int(label == truth[image_id])
    return {g: (hits[g] / totals[g] if totals[g] else None) for g in GROUPS}


def logo_correlation(stats, ann, manifest=None, strict=True):
    """Pearson r of strength and extent against each group's indicator.

    With ``strict=False`` an undefined correlation (e.g. every image in
    the same group) is reported as None instead of raising.
    """
    rows = [s for s in stats if s.image_id in ann.groups]
    if not rows:
        raise EmptySetError("no image is both scored and annotated")
    groups = [ann.groups[s.image_id] for s in rows]
    strength = [s.strength for s in rows]
    extent = [s.extent for s in rows]
    corr = {"strength": {}, "extent": {}}
    for g in GROUPS:
        ind = [1.0 if x == g else 0.0 for x in groups]
        for name, values in (("strength", strength), ("extent", extent)):
            try:
                corr[name][g] = pearson(ind, values)
            except UndefinedCorrelationError:
                if strict:
                    raise
                log.warning("correlation of %s with group %s is undefined", name, g)
                corr[name][g] = None
    prevalence = {g: groups.count(g) / len(groups) for g in GROUPS}
    acc = {}
    if manifest is not None:
        preds = {s.image_id: s.brand_predicted for s in rows}
        acc = group_accuracy(preds, manifest, ann)
    return CorrelationReport(corr, acc, prevalence, len(rows))
